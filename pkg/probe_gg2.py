import time
import numpy as np
import sys
sys.path.insert(0, "src")
from scipy.stats import ks_2samp

from genssm.filters import ffbs_lg_draw, gibbs_lg, kalman_filter
from genssm.gengibbs import build_lg_bank, gengibbs_run, gengibbs_run_many
from genssm.models import LGParams, lg_precision_prior, lg_spec, simulate_trajectory
from genssm.qnn import TrainConfig

T = 40
LAG = 12
N_TRAIN = 120_000
_, prior_batch = lg_precision_prior(phi=0.9)
tc = TrainConfig(n_epochs=8, lr_decay=((0.5, 0.3), (0.8, 0.1)))

t0 = time.time()
bank = build_lg_bank(0.9, prior_batch, T, N_TRAIN, tc=tc,
                     rng=np.random.default_rng(7), lag=LAG, chunk_size=40_000)
print(f"bank: {time.time()-t0:.1f}s  pad={bank.s_y_pad:.4f}")

# dataset at moderate truth
true = LGParams(phi=0.9, sigma_x=2.0 ** -0.5, sigma_y=1.0)  # psi_x=2, psi_y=1
rng = np.random.default_rng(11)
traj = simulate_trajectory(lg_spec(), true, T, rng)
y = traj.observations

# frozen-theta state draws, 600 lockstep chains x 1 sweep
t0 = time.time()
chains = gengibbs_run_many(bank, np.repeat(y[None, :], 600, axis=0), 1, 0,
                           theta0=np.array([2.0, 1.0]),
                           rng=np.random.default_rng(5), update_params=False)
gen_states = np.array([c.states[0] for c in chains])  # (600, T+1)
print(f"frozen sweep: {time.time()-t0:.2f}s")

trace = kalman_filter(y, true)
ff = ffbs_lg_draw(trace, true, np.random.default_rng(6), n_draws=600)  # (T+1,600)
for t in (0, 5, 10, 20, 30, 40):
    st, p = ks_2samp(gen_states[:, t], ff[t])
    print(f"  t={t:2d} KS={st:.4f} p={p:.4f}  gen m={gen_states[:,t].mean():+.3f} "
          f"sd={gen_states[:,t].std():.3f}  ffbs m={ff[t].mean():+.3f} sd={ff[t].std():.3f}")

# full sweep smoke vs exact gibbs
t0 = time.time()
chain = gengibbs_run(bank, y, 150, 50, rng=np.random.default_rng(21))
print(f"150 sweeps: {time.time()-t0:.1f}s anomalies={chain.anomalies}")
exact = gibbs_lg(y, 0.9, 2.0, 2.0, 1500, 500, np.random.default_rng(22))
gx = chain.retained[:, 0].mean()
gy = chain.retained[:, 1].mean()
ex = exact.retained_psi_x.mean()
ey = exact.retained_psi_y.mean()
print(f"psi_x gen {gx:.3f} exact {ex:.3f} ratio {gx/ex:.3f}   "
      f"sd gen {chain.retained[:,0].std():.3f} exact {exact.retained_psi_x.std():.3f}")
print(f"psi_y gen {gy:.3f} exact {ey:.3f} ratio {gy/ey:.3f}   "
      f"sd gen {chain.retained[:,1].std():.3f} exact {exact.retained_psi_y.std():.3f}")
print("ess:", {k: round(v, 1) for k, v in chain.ess().items()})
