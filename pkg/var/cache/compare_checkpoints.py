"""Pick the release checkpoint by downstream token mIoU (creature-head)."""
import json
import logging
import sys
import time

sys.path.insert(0, "src")
from partlab import tokens  # noqa: E402
from partlab.training import PretrainConfig, config_hash, ensure_pretrained  # noqa: E402

logging.basicConfig(level=logging.WARNING)

CANDIDATES = {
    "short-3000": PretrainConfig(steps=3000, batch_size=6, lr_decay_every=1000),
    "long-9000": PretrainConfig(steps=9000, batch_size=6, lr_decay_every=3000),
}

train_set = tokens.build_token_set("creature-head", 20)
val_set = tokens.build_eval_set("creature-head", 20)
tc = tokens.TokenTrainConfig(steps=2000, lr=30.0, lr_step=80, lr_gamma=0.7, seed=0)

results = {}
for name, cfg in CANDIDATES.items():
    net, table, path = ensure_pretrained(cfg)
    t0 = time.time()
    tok = tokens.optimize_token(net, train_set, tc)
    train_t = time.time() - t0
    miou = tokens.eval_miou(net, tok, val_set)
    results[name] = {"hash": config_hash(cfg), "miou": round(float(miou), 4),
                     "token_train_s": round(train_t, 1),
                     "final_loss": round(tok.history[-1], 4)}
    print(f"{name}: mIoU={miou:.4f} (train {train_t:.0f}s, loss {tok.history[-1]:.4f})",
          flush=True)

with open("var/cache/checkpoint_comparison.json", "w") as f:
    json.dump(results, f, indent=1)
winner = max(results, key=lambda k: results[k]["miou"])
print("winner:", winner, results[winner])
