#!/usr/bin/env python3
"""The statistics behind the audit layers, on hand-crafted data.

L2 asks whether learned effective lags line up with pre-specified
entity-level variables more than chance allows, using |Spearman| against
an entity-label permutation null, then Fisher-combining across seeds.
Paired model comparisons use the exact signed-rank test.
"""

import numpy as np

from acgate.stats import (fisher_combine, forecast_metrics, permutation_p,
                          spearman, wilcoxon_paired)

rng = np.random.default_rng(7)
n = 50

print("== Spearman with ties ==")
x = np.array([1.0, 2.0, 2.0, 3.0])
y = np.array([1.0, 3.0, 2.0, 4.0])
print(f"rho({x.tolist()}, {y.tolist()}) = {spearman(x, y):.4f}")

print("\n== entity-label permutation test ==")
strat = rng.normal(size=n)
aligned = strat + 0.5 * rng.normal(size=n)      # real association
noise = rng.normal(size=n)                       # none
for name, k_star in (("aligned", aligned), ("noise", noise)):
    res = permutation_p(k_star, strat, b=999, seed=0)
    print(f"{name:8s} rho={res.observed_rho:+.3f}  p={res.p_value:.4f} "
          f"(floor 1/(B+1) = {1 / (res.b + 1):.4f})")

print("\n== Fisher combination across seeds ==")
for ps in ([0.4, 0.6, 0.5], [0.04, 0.03, 0.06], [0.001] * 10):
    print(f"p-values {ps[:3]}{'...' if len(ps) > 3 else ''} -> "
          f"combined {fisher_combine(ps):.3g}")

print("\n== exact paired signed-rank test ==")
a = rng.normal(0.0, 1.0, size=20)
b = a + 0.8 + 0.3 * rng.normal(size=20)          # systematic shift
res = wilcoxon_paired(b, a)
print(f"shifted pair: W={res.w:.0f} p={res.p_value:.3g} "
      f"(exact={res.exact})")
one_sided = wilcoxon_paired(np.arange(1.0, 21.0), np.zeros(20))
print(f"all-one-signed n=20: W=0 p={one_sided.p_value:.4g} "
      f"(= 2/2^20, the exact floor)")

print("\n== forecast metrics ==")
y_true = rng.normal(size=40)
m = forecast_metrics(y_true, y_true * 0.8)
print(f"MSE={m.mse:.3f} MAE={m.mae:.3f} R^2={m.r2:.3f}")
