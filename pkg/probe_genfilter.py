import time
import numpy as np
from genssm.models import LGParams, lg_spec, simulate_trajectory
from genssm.filters import kalman_filter
from genssm.qnn import QnnConfig, TrainConfig
from genssm.genfilter import gen_filter_run
from genssm.evaluation import wasserstein1_to_normal, rmse_and_coverage

params = LGParams(phi=0.9, sigma_x=0.2, sigma_y=1.0)
spec = lg_spec()
rng = np.random.default_rng(42)
T = 60
traj = simulate_trajectory(spec, params, T, rng)
kal = kalman_filter(traj.observations, params)

qc = QnnConfig()
tc_first = TrainConfig(n_epochs=40, seed=None, lr_decay=((0.5, 0.3), (0.8, 0.1)))
for label, tc in [
    ("epochs=15 warm", TrainConfig(n_epochs=15, lr_decay=((0.4, 0.3), (0.7, 0.1)))),
    ("epochs=8 warm", TrainConfig(n_epochs=8, lr_decay=((0.4, 0.3), (0.7, 0.1)))),
]:
    t0 = time.perf_counter()
    out = gen_filter_run(spec, params, traj.observations, 1000, qc, tc,
                         rng=np.random.default_rng(7), tc_first=tc_first)
    dt = time.perf_counter() - t0
    w1 = np.mean([wasserstein1_to_normal(out.draws[t], kal.m[t],
                                         np.sqrt(kal.C[t]))
                  for t in range(T)])
    rmse, cov = rmse_and_coverage(traj.states[1:], out.draws)
    print(f"{label}: {dt:.1f}s total, {dt/T*1000:.0f} ms/step, "
          f"mean W1={w1:.4f}, rmse={rmse:.4f}, cov95={cov[0.95]:.3f}")
