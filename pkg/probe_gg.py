import numpy as np
import sys
sys.path.insert(0, "src")
from genssm.gengibbs import residual_summaries, residual_summaries_batch
from genssm.stable import sample_stable, StableParams

T = 10_000
for name, draw in [
    ("gauss", lambda r: r.standard_normal(T)),
    ("cauchy", lambda r: r.standard_cauchy(T)),
    ("stable15_p5", lambda r: sample_stable(StableParams(1.5, 0.5, 1.0, 0.0), r, size=T)),
    ("stable15_m5", lambda r: sample_stable(StableParams(1.5, -0.5, 1.0, 0.0), r, size=T)),
    ("exp_centered", lambda r: r.exponential(1.0, T) - 1.0),
]:
    vals = []
    for seed in range(12):
        r = np.random.default_rng(1000 + seed)
        s = residual_summaries(draw(r))
        vals.append(s.vector)
    vals = np.array(vals)
    lo, hi = vals.min(0), vals.max(0)
    mean = vals.mean(0)
    labels = ["ecf", "phase", "hill", "outin", "qa", "sign", "tail", "eqs"]
    print(name)
    for j, lab in enumerate(labels):
        print(f"  {lab:6s} mean {mean[j]: .4f}  range [{lo[j]: .4f}, {hi[j]: .4f}]")
