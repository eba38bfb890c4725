"""Wasserstein distance to the exact shock law: random versus deterministic sampling.

With Monte Carlo samples the distance to the exact solution measure decays
like the sampling error, about one half order in the mesh width when M equals
the number of cells. Replacing the random draws by midpoint nodes in X removes
the sampling error and leaves first-order decay.

    python demos/02_wasserstein_rates.py
"""
import numpy as np

from statsol import FluxModel, GridSpec, SchemeConfig, UncertainShock, run_mc
from statsol.metrics import fit_rate, wasserstein_vs_exact_shock
from statsol.runner import midpoint_quadrature_ensemble, repetition_seed

T = 0.2
REPS = 5
scheme = SchemeConfig(t_end=T)
flux = FluxModel.burgers()
spec = UncertainShock()

mc, mid = [], []
for n in (32, 64, 128, 256, 512):
    grid = GridSpec(n)
    w = [wasserstein_vs_exact_shock(run_mc(spec, flux, scheme, grid, n, repetition_seed(0, r)), T)
         for r in range(REPS)]
    mc.append((1 / n, float(np.mean(w))))
    mid.append((1 / n, wasserstein_vs_exact_shock(midpoint_quadrature_ensemble(spec, n, grid, flux, scheme), T)))
    print(f"n={n:>4}  MC {mc[-1][1]:.5f} (+- {np.std(w):.5f})   midpoint {mid[-1][1]:.5f}")

print(f"\nfitted rates: MC {fit_rate(mc).slope:.2f}, midpoint {fit_rate(mid).slope:.2f}")
