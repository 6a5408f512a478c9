"""Simulate a mixed table, fit the copula and impute the masked cells.

Run with ``python3 demos/walkthrough.py``.  Takes about a minute on one core.
"""
import numpy as np

from mixedcopula import (FitConfig, SimConfig, evaluate, fit, impute_dataset,
                         simulate)

sim = simulate(SimConfig(n=1000, n_continuous=2, n_binary=2, n_ordinal=2,
                         missing_rate=0.3, seed=11))
print("schema:", [f"{v.name}:{v.kind.value}" for v in sim.schema])
print(f"masked cells: {int(sim.mask.sum())} of {sim.mask.size}")

params, marginals, report = fit(sim.masked, sim.schema,
                                FitConfig(epochs=15, seed=3))
print(f"fit stopped after {report.epochs} epochs ({report.reason}), "
      f"mean NLL {report.nll[-1]:.4f}")

np.set_printoptions(precision=2, suppress=True)
print("true correlation:\n", sim.sigma)
print("estimated correlation:\n", params.sigma)

for rule in ("argmax", "median"):
    imputed, results = impute_dataset(sim.masked, params, marginals, rule=rule)
    metrics = evaluate(imputed, sim.complete, sim.mask, sim.schema,
                       sigma_hat=params.sigma, sigma_true=sim.sigma)
    print(f"\nrule = {rule}  (relative Sigma error {metrics.sigma_error:.3f})")
    print(f"  {'variable':<10}{'rmse':>8}{'class err':>11}{'smae':>8}")
    for r in metrics.rows:
        print(f"  {r['variable']:<10}{r['rmse']:>8.3f}"
              f"{r['classification_error']:>11.3f}{r['smae']:>8.3f}")

# Discrete cells keep their full conditional distribution.
row, cell = next((r, c) for r in results for c in r.cells if c.probs is not None)
print(f"\nrow {row.row}, column {cell.column}: probabilities {cell.probs}, "
      f"argmax {cell.argmax}, median {cell.median}")
