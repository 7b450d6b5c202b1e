#!/usr/bin/env python3
"""Desk-scale training comparison: logmem vs the attention baseline.

Mirrors the reduced acceptance configuration so the expected losses and the
ordering can be confirmed before pinning them in tests.
"""

import sys
import time

from lmn.corpus import generate_corpus
from lmn.data import Dataset
from lmn.model import ModelConfig, build_model, param_count
from lmn.training import TrainConfig, train

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 7
ITERS = int(sys.argv[2]) if len(sys.argv) > 2 else 2000

text = generate_corpus(1_100_000, seed=1337)
ds = Dataset.from_text(text)
print(f"corpus {len(text)} chars, vocab {len(ds.vocab)}", flush=True)

results = {}
for variant, kw in (("logmem", dict(banks=2, summarizer_bias=False)),
                    ("baseline-attn", dict(n_heads=4))):
    cfg = ModelConfig(variant=variant, vocab_size=len(ds.vocab), embed=32,
                      max_seq_len=256, n_blocks=1, seed=SEED, **kw)
    tc = TrainConfig(batch_size=16, block_size=256, max_iters=ITERS,
                     learning_rate=1e-3, eval_iters=40, eval_interval=250, seed=SEED)
    model = build_model(cfg)
    print(f"--- {variant}: {param_count(cfg)} params", flush=True)
    t0 = time.time()
    report = train(model, ds, tc, log=lambda s: print(s, flush=True))
    dt = time.time() - t0
    results[variant] = report
    print(f"{variant}: final val {report.final_val:.4f} in {dt/60:.1f} min", flush=True)

lmn, base = results["logmem"], results["baseline-attn"]
import math
print(f"\nln(vocab)-1 = {math.log(65)-1:.4f}")
print(f"logmem val {lmn.final_val:.4f} vs baseline val {base.final_val:.4f} "
      f"-> LMN {'WINS' if lmn.final_val < base.final_val else 'LOSES'}")
