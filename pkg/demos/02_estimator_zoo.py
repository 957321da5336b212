"""The five gradient estimators against the enumeration oracle.

On a network small enough to enumerate every hidden configuration we can
compute the exact criterion gradient, the exact expectation of each sampling
estimator, and paired draw variances. The tour below shows:

  1. how each estimator's exact expectation relates to the marginal
     criterion gradient dC (all are approximations at M = 2; the surrogate
     Jacobians g2/g3 trade bias for variance, the score-function g1 targets
     the expected M-sample criterion instead of the marginal),
  2. that centering the responsibilities (g5) cuts variance without moving
     the expectation: E[g5] = E[g4] to machine precision,
  3. where the variance trough sits as the centering constant c sweeps, and
  4. that C_hat_M approaches the exact criterion at the Monte Carlo rate.

Run:  python3 demos/02_estimator_zoo.py       (about half a minute)
"""

import numpy as np

from sfnn.analysis import scan_centering
from sfnn.network import Architecture, init_params
from sfnn.oracle import (
    EnumerationBudget,
    estimator_draw_moments,
    exact_criterion,
    exact_gradient,
    expected_estimator,
    mc_consistency,
)
from sfnn.rng import RngStream
from sfnn.training import TaskSplit

budget = EnumerationBudget()
rng = RngStream(12)
arch = Architecture((4, 4, 3, 2), "bernoulli", "stochastic")
params = init_params(arch, rng.substream("init"))
for name in ("W1", "W2", "V"):
    params[name] *= 2.0  # push the units away from 0.5 so gradients have teeth
x = rng.substream("x").normal((4,))
y = np.array([1.0, 0.0])

print("=" * 72)
print(f"Network {arch.layer_sizes}, bernoulli output, "
      f"{arch.stochastic_unit_count()} sampled units -> "
      f"{2 ** arch.stochastic_unit_count()} configurations")
print("=" * 72)
print(f"exact criterion C = {exact_criterion(params, arch, x, y, budget):.6f}\n")

exact = exact_gradient(params, arch, x, y, budget)

print("Exact estimator expectations at M = 2 against dC (hidden parameters)")
print(f"{'estimator':>10} {'max |E[g] - dC|':>18} {'cosine to dC':>14}")
hidden_keys = ("W1", "b1", "W2", "b2")
flat = lambda g: np.concatenate([g[k].ravel() for k in hidden_keys])
flat_exact = flat(exact)
expectations = {}
for est in ("g1", "g2", "g3", "g4", "g5"):
    expectations[est] = flat(expected_estimator(params, arch, x, y, est, 2, budget))
    e = expectations[est]
    bias = float(np.max(np.abs(e - flat_exact)))
    cos = float(e @ flat_exact / (np.linalg.norm(e) * np.linalg.norm(flat_exact)))
    print(f"{est:>10} {bias:>18.2e} {cos:>14.4f}")
print("\nEvery sampled-unit estimator points uphill (cosine near 1) while none")
print("matches dC exactly at M = 2: g1 targets the expected 2-sample criterion")
print("(scaled by 1/M), g2/g3 swap the Bernoulli draw for a surrogate Jacobian,")
print("and g4/g5 condition each layer on the sampled layer below. What IS exact")
print("is that centering never moves the expectation:")
print(f"  max |E[g5] - E[g4]| = {np.max(np.abs(expectations['g5'] - expectations['g4'])):.2e}\n")

print("Paired variance, 2000 shared draws at M = 5 (per-parameter mean)")
print(f"{'estimator':>10} {'mean variance':>16}")
moments = estimator_draw_moments(
    params, arch, x, y, ("g1", "g4", "g5"), 5, 2000, rng.substream("draws")
)
for est in ("g1", "g4", "g5"):
    var = moments[est][1]
    hidden = np.concatenate([var[k].ravel() for k in ("W1", "b1", "W2", "b2")])
    print(f"{est:>10} {hidden.mean():>16.6f}")
v4 = np.concatenate([moments["g4"][1][k].ravel() for k in ("W1", "b1", "W2", "b2")])
v5 = np.concatenate([moments["g5"][1][k].ravel() for k in ("W1", "b1", "W2", "b2")])
print(f"\nvar(g5) < var(g4) on {np.mean(v5 < v4):.0%} of hidden parameters\n")

print("Sweeping the centering constant c = cM / M  (first-layer update norm)")
split = TaskSplit(rng.substream("scan-x").normal((40, 4)),
                  (rng.substream("scan-y").uniform((40, 2)) > 0.5).astype(np.float64))
rows = scan_centering(params, arch, split, 5, np.arange(0.0, 3.01, 0.25),
                      rng.substream("scan"), n_examples=40)
peak = max(r["mean_norm"] for r in rows)
for r in rows:
    bar = "#" * int(round(40 * r["mean_norm"] / peak))
    print(f"  cM = {r['cm']:>4.2f}  {r['mean_norm']:>8.4f}  {bar}")
best = min(rows, key=lambda r: r["mean_norm"])
print(f"\ntrough at cM = {best['cm']:.2f}; the default c = 1/M sits at cM = 1\n")

print("Monte Carlo consistency of C_hat_M")
print(f"{'M':>8} {'RMSE vs exact C':>18}")
rows = mc_consistency(params, arch, x, y, (10, 100, 1000, 10_000), 200,
                      rng.substream("mc"), budget)
for m, rmse in rows:
    print(f"{m:>8} {rmse:>18.6f}")
slope = np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0]
print(f"\nlog-log slope = {slope:.3f}  (Monte Carlo rate is -0.5)")
