"""Train the longer-schedule checkpoint variant into the pretrain cache."""
import logging
import sys
import time

sys.path.insert(0, "src")
from partlab.training import PretrainConfig, config_hash, ensure_pretrained  # noqa: E402

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

cfg = PretrainConfig(steps=9000, batch_size=6, lr_decay_every=3000)
print("config hash:", config_hash(cfg), flush=True)
t0 = time.time()
net, table, out = ensure_pretrained(cfg)
print(f"done in {time.time() - t0:.0f}s -> {out}", flush=True)
print("model hash:", net.state_hash(), flush=True)
