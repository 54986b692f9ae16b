"""Regenerate the committed DDIM regression goldens under tests/goldens/.

The golden trajectory uses the deterministic reference net (untrained, built
from fixed seeds), so it is reproducible from code alone — no checkpoint
download or training run required. Run this only when the sampler's numeric
contract intentionally changes; the acceptance suite compares fresh
trajectories against these files byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from partlab import pngio, text
from partlab.engine import scene_prompt_text
from partlab.sampler import Trajectory, sample
from partlab.scenes import SceneSpec, image_space
from partlab.schedule import make_schedule
from partlab.unet import reference_net

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "goldens"
GOLDEN_SEED = 11
GOLDEN_GUIDANCE = 7.5
GOLDEN_STEPS = 50
GOLDEN_SCENE = SceneSpec(
    kind="creature", stance="quadruped", background="sky",
    attrs=("red", "blue", "green"), seed=31,
)


def trajectory_digest(traj: Trajectory) -> str:
    h = hashlib.sha256()
    for arr in (traj.states, traj.eps):
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def golden_trajectory() -> Trajectory:
    net = reference_net()
    table = text.init_embedding_table(3)
    ctx_c = text.encode_prompt(GOLDEN_SCENE.prompt_tokens(), table)
    ctx_u = text.encode_prompt(text.null_prompt_tokens(), table)
    sched = make_schedule(GOLDEN_STEPS)
    return sample(net, sched, ctx_c, ctx_u, seed=GOLDEN_SEED, guidance=GOLDEN_GUIDANCE)


def main() -> None:
    traj = golden_trajectory()
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    image = image_space(traj.x0).transpose(1, 2, 0)
    pngio.write_png(GOLDEN_DIR / "ddim_golden_x0.png", image)
    manifest = {
        "steps": GOLDEN_STEPS,
        "seed": GOLDEN_SEED,
        "guidance": GOLDEN_GUIDANCE,
        "prompt": scene_prompt_text(GOLDEN_SCENE),
        "trajectory_sha256": trajectory_digest(traj),
        "x0_png": "ddim_golden_x0.png",
    }
    path = GOLDEN_DIR / "ddim_golden.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")
    print(f"trajectory sha256: {manifest['trajectory_sha256']}")


if __name__ == "__main__":
    main()
