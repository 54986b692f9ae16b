"""Diagnostic: per-timestep conditional vs null-prompt noise MSE on val scenes."""
import json
import sys

import numpy as np

sys.path.insert(0, "src")
from partlab import rng, scenes, text  # noqa: E402
from partlab import tensor as T  # noqa: E402
from partlab.schedule import make_schedule  # noqa: E402
from partlab.training import (  # noqa: E402
    DEFAULT_PRETRAIN,
    VAL_SCENE_SEED_BASE,
    load_pretrained,
    render_training_set,
)

net, table = load_pretrained("var/cache/pretrain/949905e7d559")
cfg = DEFAULT_PRETRAIN
sched = make_schedule(cfg.T)
images, prompts = render_training_set(cfg.val_scenes, VAL_SCENE_SEED_BASE)
null = [text.null_prompt_tokens()] * len(prompts)

rows = []
for t in (1, 2, 3, 5, 8, 12, 16, 20, 25, 30, 35, 40, 45, 48, 50):
    eps = np.stack(
        [rng.stream(7, f"pertmse:{t}:{j}").normal(size=images[0].shape) for j in range(len(images))]
    )
    ab = sched.alpha_bar[t]
    x_t = np.sqrt(ab) * images + np.sqrt(1.0 - ab) * eps
    t_vec = np.full(len(images), t, dtype=np.int64)
    out = {}
    for name, ps in (("cond", prompts), ("uncond", null)):
        total = 0.0
        with T.no_grad():
            for lo in range(0, len(images), 8):
                ctx = text.encode_prompt_batch(ps[lo:lo + 8], table)
                pred, _ = net.forward(x_t[lo:lo + 8], t_vec[lo:lo + 8], ctx)
                total += float(np.sum((pred.data - eps[lo:lo + 8]) ** 2))
        out[name] = total / eps.size
    rows.append({"t": t, **out, "ratio": out["cond"] / out["uncond"]})
    print(f"t={t:3d}  cond={out['cond']:.5f}  uncond={out['uncond']:.5f}  "
          f"ratio={out['cond'] / out['uncond']:.3f}", flush=True)

with open("var/cache/per_t_mse.json", "w") as f:
    json.dump(rows, f, indent=1)
print("saved var/cache/per_t_mse.json")
