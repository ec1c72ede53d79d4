"""Train a small dual-stream model and sweep thresholds on held-out scenes.

Run:  python3 demos/train_and_sweep.py [iterations]
The default budget (600 iterations) takes a few minutes on one core.
Uses lr 3e-5 like the acceptance run (see the README training notes).
"""
import sys
import time

from aeroseg import experiments as ex
from aeroseg.data import SynthParams, generate_scenes
from aeroseg.eval import best_row, sweep_many, threshold_grid

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 600
train = generate_scenes(SynthParams(), range(100, 106))
val = generate_scenes(SynthParams(), [300])
test = generate_scenes(SynthParams(), [200, 201])

cfg = ex.TrainConfig(epochs=2, iters_per_epoch=iters // 2, seed=1, mode="dual", lr=3e-5)
t0 = time.perf_counter()
res = ex.train(cfg, train, val, progress=lambda e, log: print(f"epoch {e}: val F {log.val_f[-1]:.3f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s, first/last loss {res.log.losses[0]:.0f}/{res.log.losses[-1]:.0f}")

maps = [(ex.predict_image(res.net, s.image), s.mask) for s in test]
rows = sweep_many(maps, threshold_grid(0.05))
for r in rows[::3]:
    print(f"t={r.threshold:.2f}  correctness={r.correctness:.3f}  completeness={r.completeness:.3f}  F={r.f_measure:.3f}")
b = best_row(rows)
print(f"best mean F {b.f_measure:.3f} at {b.threshold:.2f}")
