"""Named verification suites behind the oracle-check command.

Each check builds tiny networks, computes reference values by enumeration or
closed form, and compares the sampling machinery against them. Returned rows
are (name, passed, detail).
"""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from .estimators import estimate_g3
from .forward import criterion_hat, forward_sample
from .mathutils import logit, sigmoid_prime
from .network import Architecture, init_params
from .oracle import (
    EnumerationBudget,
    ToyGame,
    estimator_draw_moments,
    exact_criterion,
    exact_gradient,
    expected_estimator,
    finite_difference_gradient,
    mc_consistency,
    score_function_expectation,
    toy_ascend_marginal,
    toy_ascend_sampled_c1,
)
from .rng import RngStream, bernoulli

CheckRow = Tuple[str, bool, str]


def _random_target(arch: Architecture, rng: RngStream):
    if arch.output_kind == "softmax":
        return int(rng.integers(0, arch.d_out))
    if arch.output_kind == "bernoulli":
        return bernoulli(np.full(arch.d_out, 0.5), rng)
    return rng.normal(arch.d_out)


def check_theorem1(seed: int) -> List[CheckRow]:
    game = ToyGame()
    corner_value = 0.5 * math.log(0.9) + 0.5 * math.log(0.1)
    res_m = toy_ascend_marginal(game)
    ok_m = bool(
        np.all(np.abs(res_m.probs - 0.5) <= 0.01)
        and abs(res_m.value - math.log(0.5)) <= 1e-3
    )
    detail_m = (
        f"marginal ascent -> probs ({res_m.probs[0]:.4f}, {res_m.probs[1]:.4f}), "
        f"value {res_m.value:.6f} (target {math.log(0.5):.6f})"
    )
    res_s = toy_ascend_sampled_c1(game, RngStream(seed).substream("toy"))
    ok_s = bool(res_s.corner and abs(res_s.value - corner_value) <= 1e-3)
    detail_s = (
        f"sampled ascent -> probs ({res_s.probs[0]:.4f}, {res_s.probs[1]:.4f}), "
        f"corner={res_s.corner}, value {res_s.value:.6f} (target {corner_value:.6f})"
    )
    return [
        ("theorem1-marginal", ok_m, detail_m),
        ("theorem1-sampled-corner", ok_s, detail_s),
    ]


def check_score_zero(seed: int, budget: EnumerationBudget) -> List[CheckRow]:
    shapes = [
        ((2, 3, 2), "softmax", "stochastic", None),
        ((3, 4, 2), "bernoulli", "stochastic", None),
        ((2, 2, 3, 2), "gaussian", "stochastic", None),
        ((3, 4, 3), "softmax", "hybrid", ((2, 2),)),
    ]
    worst = 0.0
    for i in range(20):
        layers, kind, variant, split = shapes[i % len(shapes)]
        rng = RngStream(seed).substream("score", i)
        arch = Architecture(layers, kind, variant, split)
        params = init_params(arch, rng.substream("params"))
        for k in params:
            params[k] = params[k] * 3.0  # push probabilities off 1/2
        x = rng.substream("x").normal(arch.d_in)
        grads = score_function_expectation(params, arch, x, budget)
        worst = max(worst, max(np.abs(g).max() for g in grads.values()))
    ok = worst < 1e-12
    return [("score-zero-mean", ok, f"max |E[d log P(h|x)]| = {worst:.3e} over 20 nets")]


def check_g1_single_unit(seed: int, budget: EnumerationBudget) -> List[CheckRow]:
    rng = RngStream(seed).substream("g1")
    worst = 0.0
    for i in range(100):
        sub = rng.substream(i)
        a = float(sub.substream("a").uniform() * 4.0 - 2.0)
        l0 = -math.exp(float(sub.substream("l0").uniform() * 3.0 - 2.0))
        l1 = -math.exp(float(sub.substream("l1").uniform() * 3.0 - 2.0))
        arch = Architecture((1, 1, 1), "bernoulli")
        c0 = float(logit(math.exp(l0)))
        v = float(logit(math.exp(l1))) - c0
        params = {
            "W1": np.array([[a]]), "b1": np.zeros(1),
            "V": np.array([[v]]), "c": np.array([c0]),
        }
        grads = expected_estimator(
            params, arch, np.array([1.0]), np.array([1.0]), "g1", 1, budget
        )
        closed = sigmoid_prime(np.array(a)) * (l1 - l0)
        worst = max(worst, abs(float(grads["b1"][0]) - float(closed)))
        worst = max(worst, abs(float(grads["W1"][0, 0]) - float(closed)))
    ok = worst < 1e-12
    return [("g1-single-unit", ok, f"max |E[g1] - sigma'(a)(L1 - L0)| = {worst:.3e}")]


def check_g4_g5_expectation(seed: int, budget: EnumerationBudget) -> List[CheckRow]:
    shapes = [
        ((3, 4, 3), "softmax"),
        ((2, 3, 2), "bernoulli"),
        ((2, 3, 2, 2), "gaussian"),
    ]
    worst = 0.0
    for i in range(10):
        layers, kind = shapes[i % len(shapes)]
        rng = RngStream(seed).substream("g4g5", i)
        arch = Architecture(layers, kind)
        params = init_params(arch, rng.substream("params"))
        x = rng.substream("x").normal(arch.d_in)
        y = _random_target(arch, rng.substream("y"))
        e4 = expected_estimator(params, arch, x, y, "g4", 2, budget)
        e5 = expected_estimator(params, arch, x, y, "g5", 2, budget)
        worst = max(worst, max(np.abs(e4[k] - e5[k]).max() for k in e4))
    ok = worst < 1e-10
    return [("g4-g5-expectation", ok, f"max |E[g4] - E[g5]| = {worst:.3e} over 10 nets")]


def check_variance_order(seed: int) -> List[CheckRow]:
    rng = RngStream(seed).substream("var")
    arch = Architecture((4, 5, 3), "softmax")
    params = init_params(arch, rng.substream("params"))
    x = rng.substream("x").normal(arch.d_in)
    y = _random_target(arch, rng.substream("y"))
    moments = estimator_draw_moments(
        params, arch, x, y, ("g4", "g5"), m=2, n_draws=10000, rng=rng.substream("draws")
    )
    hidden = [n for n in params if n not in ("V", "c")]
    lower = total = 0
    for name in hidden:
        v4 = moments["g4"][1][name].ravel()
        v5 = moments["g5"][1][name].ravel()
        lower += int(np.sum(v5 < v4))
        total += v4.size
    frac = lower / total
    ok = frac >= 0.9
    return [
        ("variance-order", ok,
         f"g5 variance below g4 on {lower}/{total} hidden parameters ({frac:.1%})")
    ]


def _rel_err(fd, grads) -> float:
    scale = max(max(np.abs(g).max() for g in grads.values()), 1.0)
    return max(np.abs(fd[k] - grads[k]).max() for k in grads) / scale


def check_backprop_fd(seed: int) -> List[CheckRow]:
    rng = RngStream(seed).substream("bp-fd")
    arch = Architecture((3, 4, 2), "softmax", "deterministic")
    params = init_params(arch, rng.substream("params"))
    x = rng.substream("x").normal(arch.d_in)
    y = _random_target(arch, rng.substream("y"))

    def f(p):
        trace = forward_sample(p, arch, x, 1, RngStream(0), y=y)
        return float(criterion_hat(trace)[0])

    trace = forward_sample(params, arch, x, 1, RngStream(0), y=y)
    grads = estimate_g3(params, arch, trace, example_weights=np.ones(1))
    err = _rel_err(finite_difference_gradient(f, params), grads)
    ok = err <= 1e-6
    return [("backprop-fd", ok, f"max relative error {err:.3e}")]


def check_exact_fd(seed: int, budget: EnumerationBudget) -> List[CheckRow]:
    rng = RngStream(seed).substream("exact-fd")
    arch = Architecture((3, 4, 2), "bernoulli")
    params = init_params(arch, rng.substream("params"))
    x = rng.substream("x").normal(arch.d_in)
    y = _random_target(arch, rng.substream("y"))
    grads = exact_gradient(params, arch, x, y, budget)
    fd = finite_difference_gradient(lambda p: exact_criterion(p, arch, x, y, budget), params)
    err = _rel_err(fd, grads)
    ok = err <= 1e-6
    return [("exact-fd", ok, f"max relative error {err:.3e}")]


def check_mc_consistency(seed: int, budget: EnumerationBudget) -> List[CheckRow]:
    rng = RngStream(seed).substream("mc")
    arch = Architecture((5, 6, 4), "bernoulli")
    params = init_params(arch, rng.substream("params"))
    x = rng.substream("x").normal(arch.d_in)
    y = _random_target(arch, rng.substream("y"))
    rows = mc_consistency(
        params, arch, x, y, (100, 1000, 10000, 100000), 20, rng.substream("draws"), budget
    )
    log_m = np.log([r[0] for r in rows])
    log_rmse = np.log([r[1] for r in rows])
    slope = float(np.polyfit(log_m, log_rmse, 1)[0])
    ok = -0.6 <= slope <= -0.4
    detail = "slope {:.3f}; ".format(slope) + ", ".join(
        f"M={m}: {r:.2e}" for m, r in rows
    )
    return [("mc-consistency", ok, detail)]


def run_checks(which: str, seed: int, max_hidden: int) -> List[CheckRow]:
    budget = EnumerationBudget(max_hidden_units=max_hidden)
    suites = {
        "theorem1": lambda: check_theorem1(seed),
        "score-zero": lambda: check_score_zero(seed, budget),
        "g1-single-unit": lambda: check_g1_single_unit(seed, budget),
        "g4-g5-expectation": lambda: check_g4_g5_expectation(seed, budget),
        "variance-order": lambda: check_variance_order(seed),
        "backprop-fd": lambda: check_backprop_fd(seed),
        "exact-fd": lambda: check_exact_fd(seed, budget),
        "mc-consistency": lambda: check_mc_consistency(seed, budget),
    }
    rows: List[CheckRow] = []
    if which == "all":
        for fn in suites.values():
            rows.extend(fn())
    else:
        rows.extend(suites[which]())
    return rows
