"""Fit a conditional bridge on a few simulated contexts and generate one profile."""
import numpy as np

from genprof import SolverConfig
from genprof.generator import fit_bridge, generate_profile
from genprof.workloadsim import default_model, simulate_dataset

model = default_model()
ids = list(model.catalog)
train_ids = ids[::8]  # every 8th catalog entry
target = ids[13]

data = simulate_dataset(model, train_ids, n_d=10, seed=0)
print(f"{len(data.records)} runs over {len(train_ids)} contexts, {len(data.grid)} snapshots")

bridge = fit_bridge(data, config=SolverConfig(epsilon=0.1))
sol = bridge.solution
print(f"solver: converged={sol.converged} in {sol.iterations} sweeps, residual {sol.final_error:.2e}")

beta = model.catalog[target]
prof = generate_profile(bridge, beta, delta_t=0.01)
truth = model.true_profile(beta, prof.times)

np.set_printoptions(precision=3, suppress=True)
settings = ", ".join(f"{k}={v:g}" for k, v in zip(model.context_names, beta))
print(f"context {target}: {settings}")
for name, gen, ref in zip(model.state_names, prof.states.T, truth.T):
    err = np.median(np.abs(gen - ref) / np.maximum(ref, 1.0))
    print(f"  {name:>14}: median relative error {err:.3f}")
