"""Shared test oracles: finite-difference gradients and error norms."""

from __future__ import annotations

import numpy as np

from partlab import tensor as T


def fd_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function wrt array x.

    f is re-evaluated with x mutated in place; it must read x fresh each call.
    """
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        with T.no_grad():
            fp = f()
        flat[i] = keep - h
        with T.no_grad():
            fm = f()
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.abs(want).max()) if want.size else 0.0, 1e-8)
    return float(np.abs(got - want).max()) / scale


def check_grad(build_loss, leaves: dict[str, T.Tensor], tol: float = 1e-4) -> dict[str, float]:
    """Backprop build_loss() and compare every leaf's grad to finite differences."""
    loss = build_loss()
    T.backward(loss)
    errs = {}
    for name, leaf in leaves.items():
        got = leaf.grad
        assert got is not None, f"no gradient reached {name}"
        want = fd_grad(lambda: build_loss().item(), leaf.data)
        errs[name] = rel_err(got, want)
        assert errs[name] < tol, f"{name}: rel err {errs[name]:.3e} >= {tol}"
        leaf.grad = None
    return errs
