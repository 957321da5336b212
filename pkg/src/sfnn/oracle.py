"""Exact small-network quantities by exhaustive enumeration.

For networks whose sampled binary units number at most a couple of dozen,
every joint hidden configuration can be enumerated, giving the exact mixture
criterion C = log sum_h P(h|x) P(y|h), its exact parameter gradient, exact
estimator expectations over ordered particle tuples, and the score-function
zero-mean identity. These are the reference values the sampling estimators
are tested against.

Also hosts the two-point toy problem demonstrating how the single-particle
criterion drives hidden probabilities to deterministic corners while the
marginal criterion prefers the interior, plus paired variance measurement
and finite-difference gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .estimators import BaselineState, apply_estimator, estimate_g3, estimate_g4
from .forward import ParticleTrace, criterion_hat, forward_sample, output_log_prob
from .mathutils import log_sigmoid_clamped, log_sum_exp, sigmoid
from .network import Architecture, GradientSet, Params, zeros_like_params
from .rng import RngStream


class BudgetExceededError(RuntimeError):
    """The requested enumeration is larger than the configured budget allows."""


@dataclass(frozen=True)
class EnumerationBudget:
    max_hidden_units: int = 16       # total sampled binary units
    max_tuple_particles: int = 2     # M in ordered-tuple expectations
    max_joint_rows: int = 1 << 20    # configurations x tuples cap


@dataclass
class EnumerationTable:
    """All joint sampled-unit configurations for one input.

    Row r of every array describes the same joint configuration. For plain
    networks feed_act aliases sampled_configs; for hybrids feed_act holds the
    deterministic sub-unit values computed under that row's samples.
    """

    log_prior: np.ndarray                     # (N,) log P(config | x)
    sampled_configs: List[np.ndarray]         # per layer (N, n_sampled)
    sampled_pre: List[Optional[np.ndarray]]   # per layer (N, n_sampled); None if parameterless
    feed_act: List[np.ndarray]                # per layer (N, n_feed)
    top_feat: np.ndarray                      # (N, top)

    @property
    def n_configs(self) -> int:
        return self.log_prior.shape[0]


def _binary_configs(n: int) -> np.ndarray:
    """(2^n, n) array of all binary rows; unit j follows bit j of the row index."""
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)


def enumerate_configurations(
    params: Params, arch: Architecture, x: np.ndarray, budget: EnumerationBudget
) -> EnumerationTable:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("enumeration works on a single input vector")
    total = arch.stochastic_unit_count()
    if total == 0:
        raise ValueError("network has no sampled units to enumerate")
    if total > budget.max_hidden_units:
        raise BudgetExceededError(
            f"{total} sampled units exceed the enumeration budget of "
            f"{budget.max_hidden_units}"
        )
    if 2**total > budget.max_joint_rows:
        raise BudgetExceededError(
            f"2^{total} configurations exceed the budget of "
            f"{budget.max_joint_rows} rows"
        )

    log_prior = np.zeros(1)
    configs: List[np.ndarray] = []
    pres: List[Optional[np.ndarray]] = []
    feeds: List[np.ndarray] = []
    prev = x[None, :]  # (N, feed dim of the layer below)

    for l in range(1, arch.n_hidden + 1):
        if arch.is_hybrid:
            ns, _ = arch.hybrid_split[l - 1]
            cand = _binary_configs(ns)
            if arch.variant == "hybrid":
                a_s = prev @ params[f"Ws{l}"].T + params[f"bs{l}"]  # (N, ns)
                step = log_sigmoid_clamped(a_s) @ cand.T + log_sigmoid_clamped(-a_s) @ (
                    1.0 - cand.T
                )
            else:
                a_s = None
                step = np.full((prev.shape[0], cand.shape[0]), ns * math.log(0.5))
        else:
            n = arch.layer_sizes[l]
            cand = _binary_configs(n)
            a_s = prev @ params[f"W{l}"].T + params[f"b{l}"]
            step = log_sigmoid_clamped(a_s) @ cand.T + log_sigmoid_clamped(-a_s) @ (
                1.0 - cand.T
            )
        k = cand.shape[0]
        log_prior = (log_prior[:, None] + step).reshape(-1)
        configs = [np.repeat(c, k, axis=0) for c in configs]
        pres = [np.repeat(p, k, axis=0) if p is not None else None for p in pres]
        feeds = [np.repeat(f, k, axis=0) for f in feeds]
        n_old = prev.shape[0]
        prev = np.repeat(prev, k, axis=0)
        configs.append(np.tile(cand, (n_old, 1)))
        pres.append(np.repeat(a_s, k, axis=0) if a_s is not None else None)
        if arch.is_hybrid:
            cat = np.concatenate([prev, configs[-1]], axis=1)
            d = sigmoid(cat @ params[f"Wd{l}"].T + params[f"bd{l}"])
            feeds.append(d)
            prev = d
        else:
            feeds.append(configs[-1])
            prev = configs[-1]

    if arch.is_hybrid and arch.output_reads_stochastic:
        top = np.concatenate([feeds[-1], configs[-1]], axis=1)
    else:
        top = feeds[-1]
    return EnumerationTable(
        log_prior=log_prior, sampled_configs=configs, sampled_pre=pres,
        feed_act=feeds, top_feat=top,
    )


def _conditional_log_py(
    params: Params, arch: Architecture, table: EnumerationTable, y
) -> np.ndarray:
    """log P(y | config) for every row -> (N,)."""
    out = table.top_feat @ params["V"].T + params["c"]
    if arch.output_kind == "softmax":
        y_b = np.asarray([y]).reshape(1)
    else:
        y_b = np.asarray(y, dtype=np.float64).reshape(1, -1)
    return output_log_prob(arch.output_kind, out[None, :, :], y_b)[0]


def exact_criterion(
    params: Params, arch: Architecture, x: np.ndarray, y, budget: EnumerationBudget
) -> float:
    """log P(y | x) marginalized over every hidden configuration."""
    if arch.stochastic_unit_count() == 0:
        trace = forward_sample(params, arch, x, 1, RngStream(0), y=y)
        return float(criterion_hat(trace)[0])
    table = enumerate_configurations(params, arch, x, budget)
    return float(log_sum_exp(table.log_prior + _conditional_log_py(params, arch, table, y)))


def _table_as_trace(
    params: Params, arch: Architecture, table: EnumerationTable, x: np.ndarray, y
) -> ParticleTrace:
    """Present the enumeration as one example whose particles are the configs.

    log_py is set to the joint log P(h, y | x), so the responsibilities the
    estimator machinery computes are exactly the posterior P(h | x, y).
    """
    n = table.n_configs
    pre = [p[None] if p is not None else None for p in table.sampled_pre]
    prob = [sigmoid(p) if p is not None else None for p in pre]
    act = [c[None] for c in table.sampled_configs]
    top = table.top_feat[None]
    out_pre = top @ params["V"].T + params["c"]
    if arch.output_kind == "softmax":
        y_b = np.asarray([y]).reshape(1)
    else:
        y_b = np.asarray(y, dtype=np.float64).reshape(1, -1)
    trace = ParticleTrace(
        x=np.asarray(x, dtype=np.float64)[None], m=n,
        pre=pre, prob=prob, act=act,
        stoch_pre=[None] * arch.n_hidden, stoch_prob=[None] * arch.n_hidden,
        stoch_act=[None] * arch.n_hidden,
        top_feat=top, out_pre=out_pre, deterministic=False,
    )
    trace.y = y_b
    cond = output_log_prob(arch.output_kind, out_pre, y_b)
    trace.log_py = table.log_prior[None] + cond
    return trace


def exact_gradient(
    params: Params, arch: Architecture, x: np.ndarray, y, budget: EnumerationBudget
) -> GradientSet:
    """Exact gradient of the marginal criterion log P(y | x).

    Plain stochastic networks: posterior-weighted score form, realized by
    feeding the enumeration through the responsibility-weighted machinery
    (posterior weights arise from the joint log-likelihood). Deterministic
    networks: plain backprop. Hybrid variants are not supported here: their
    exact gradient includes paths through the deterministic sub-units into
    the sampling probabilities that the estimators deliberately omit, so no
    shared machinery is exact for them.
    """
    if arch.stochastic_unit_count() == 0:
        trace = forward_sample(params, arch, x, 1, RngStream(0), y=y)
        return estimate_g3(params, arch, trace, example_weights=np.ones(1))
    if arch.is_hybrid:
        raise NotImplementedError("exact gradients cover plain and deterministic variants")
    table = enumerate_configurations(params, arch, x, budget)
    trace = _table_as_trace(params, arch, table, x, y)
    return estimate_g4(params, arch, trace, example_weights=np.ones(1))


def score_function_expectation(
    params: Params, arch: Architecture, x: np.ndarray, budget: EnumerationBudget
) -> GradientSet:
    """E over h ~ P(h|x) of d log P(h|x) / d theta, computed directly.

    Exactly zero in expectation for every parameterized sampled unit; output
    parameters do not enter P(h|x) and are returned as zeros. Computed from
    the enumeration table alone, independent of the estimator code paths.
    """
    grads = zeros_like_params(params)
    if arch.stochastic_unit_count() == 0:
        return grads
    table = enumerate_configurations(params, arch, x, budget)
    prior = np.exp(table.log_prior)
    x = np.asarray(x, dtype=np.float64)
    for l in range(1, arch.n_hidden + 1):
        pre = table.sampled_pre[l - 1]
        if pre is None:
            continue  # parameterless Bernoulli(0.5) units
        eps = table.sampled_configs[l - 1] - sigmoid(pre)
        if arch.is_hybrid:
            names = (f"Ws{l}", f"bs{l}")
        else:
            names = (f"W{l}", f"b{l}")
        if l == 1:
            grads[names[0]] = np.einsum("r,rn,p->np", prior, eps, x)
        else:
            grads[names[0]] = np.einsum("r,rn,rp->np", prior, eps, table.feed_act[l - 2])
        grads[names[1]] = np.einsum("r,rn->n", prior, eps)
    return grads


def expected_estimator(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    y,
    estimator: str,
    m: int,
    budget: EnumerationBudget,
    baselines: Optional[BaselineState] = None,
    g5_c: Optional[float] = None,
) -> GradientSet:
    """E over ordered M-tuples of hidden samples of a sampling estimator.

    Every ordered tuple of configurations is weighted by its product prior
    and fed through the real estimator code, so this is the estimator's true
    expectation at the given parameters (g1 baselines, if any, stay frozen).
    """
    if arch.is_hybrid:
        raise NotImplementedError("tuple expectations cover plain stochastic variants")
    if arch.stochastic_unit_count() == 0:
        # point mass: one deterministic pass is the estimator's expectation
        x_b = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if arch.output_kind == "softmax":
            y_b = np.asarray([y]).reshape(1)
        else:
            y_b = np.asarray(y, dtype=np.float64).reshape(1, -1)
        trace = forward_sample(params, arch, x_b, 1, RngStream(0), y=y_b)
        grads, _ = apply_estimator(estimator, params, arch, trace,
                                   baselines=baselines, g5_c=g5_c,
                                   example_weights=np.ones(1))
        return grads
    if m > budget.max_tuple_particles:
        raise BudgetExceededError(
            f"tuples of {m} particles exceed the budget of {budget.max_tuple_particles}"
        )
    table = enumerate_configurations(params, arch, x, budget)
    n = table.n_configs
    if n**m > budget.max_joint_rows:
        raise BudgetExceededError(
            f"{n}^{m} ordered tuples exceed the budget of {budget.max_joint_rows} rows"
        )
    grids = np.meshgrid(*([np.arange(n)] * m), indexing="ij")
    idx = np.stack(grids, axis=-1).reshape(-1, m)  # (T, m)
    t = idx.shape[0]
    weights = np.exp(table.log_prior[idx].sum(axis=1))

    x = np.asarray(x, dtype=np.float64)
    pre = [p[idx] if p is not None else None for p in table.sampled_pre]   # (T, m, n)
    prob = [sigmoid(p) if p is not None else None for p in pre]
    act = [c[idx] for c in table.sampled_configs]
    top = act[-1]
    out_pre = top @ params["V"].T + params["c"]
    if arch.output_kind == "softmax":
        y_b = np.full(t, y, dtype=np.int64)
    else:
        y_b = np.tile(np.asarray(y, dtype=np.float64).reshape(1, -1), (t, 1))
    trace = ParticleTrace(
        x=np.tile(x, (t, 1)), m=m, pre=pre, prob=prob, act=act,
        stoch_pre=[None] * arch.n_hidden, stoch_prob=[None] * arch.n_hidden,
        stoch_act=[None] * arch.n_hidden,
        top_feat=top, out_pre=out_pre, deterministic=False,
    )
    trace.y = y_b
    trace.log_py = output_log_prob(arch.output_kind, out_pre, y_b)
    grads, _ = apply_estimator(
        estimator, params, arch, trace,
        baselines=baselines, g5_c=g5_c, example_weights=weights,
    )
    return grads


def estimator_draw_moments(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    y,
    estimators: Sequence[str],
    m: int,
    n_draws: int,
    rng: RngStream,
    g5_c: Optional[float] = None,
) -> Dict[str, Tuple[GradientSet, GradientSet]]:
    """Paired per-parameter mean and unbiased variance over sampled traces.

    Every estimator sees the identical sequence of traces, so differences in
    the returned variances are purely due to the estimators themselves.
    """
    if n_draws < 2:
        raise ValueError("variance needs at least two draws")
    x = np.asarray(x, dtype=np.float64)
    batch = 1 if x.ndim == 1 else x.shape[0]
    sums = {e: zeros_like_params(params) for e in estimators}
    sumsq = {e: zeros_like_params(params) for e in estimators}
    for t in range(n_draws):
        streams = [rng.substream("draw", t, i) for i in range(batch)]
        trace = forward_sample(params, arch, x, m, streams if batch > 1 else streams[0], y=y)
        for e in estimators:
            grads, _ = apply_estimator(e, params, arch, trace, g5_c=g5_c)
            for k, g in grads.items():
                sums[e][k] += g
                sumsq[e][k] += g * g
    out: Dict[str, Tuple[GradientSet, GradientSet]] = {}
    for e in estimators:
        mean = {k: s / n_draws for k, s in sums[e].items()}
        var = {
            k: (sumsq[e][k] - n_draws * mean[k] ** 2) / (n_draws - 1)
            for k in sums[e]
        }
        out[e] = (mean, var)
    return out


def mc_consistency(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    y,
    m_values: Sequence[int],
    n_replicates: int,
    rng: RngStream,
    budget: EnumerationBudget,
) -> List[Tuple[int, float]]:
    """RMSE of C_hat_M against the enumerated criterion, per particle count."""
    exact = exact_criterion(params, arch, x, y, budget)
    rows = []
    for m in m_values:
        errs = np.empty(n_replicates)
        for r in range(n_replicates):
            trace = forward_sample(params, arch, x, int(m), rng.substream("mc", int(m), r), y=y)
            errs[r] = criterion_hat(trace)[0] - exact
        rows.append((int(m), float(np.sqrt(np.mean(errs**2)))))
    return rows


def finite_difference_gradient(
    f: Callable[[Params], float],
    params: Params,
    names: Optional[Sequence[str]] = None,
    step: float = 1e-5,
) -> GradientSet:
    """Central finite differences of a scalar function of the parameters."""
    names = list(names) if names is not None else list(params)
    work = {k: v.copy() for k, v in params.items()}
    grads: GradientSet = {}
    for name in names:
        g = np.zeros_like(work[name])
        flat = work[name].reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f(work)
            flat[i] = orig - step
            lo = f(work)
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


# ---------------------------------------------------------------------------
# Two-point toy problem: one binary hidden unit per input, two inputs, two
# outputs, data labels split 50/50 for both inputs.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyGame:
    """P(y|h) rows are h = 0, 1; p_y_given_x rows are the data conditionals."""

    p_y_given_h: np.ndarray = field(
        default_factory=lambda: np.array([[0.9, 0.1], [0.1, 0.9]])
    )
    p_x: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    p_y_given_x: np.ndarray = field(
        default_factory=lambda: np.array([[0.5, 0.5], [0.5, 0.5]])
    )


@dataclass
class ToyAscentResult:
    mode: str
    logits: np.ndarray          # (2,): one logit per input
    probs: np.ndarray           # sigma(logits): P(h=1 | x)
    value: float                # criterion matching the mode, in nats
    corner: bool                # both probs within 0.01 of {0, 1}
    steps: int
    history: List[Tuple[int, float, float, float]] = field(default_factory=list)


def toy_is_corner(probs: np.ndarray, tol: float = 0.01) -> bool:
    return bool(np.all(np.minimum(probs, 1.0 - probs) < tol))


def toy_marginal_criterion(game: ToyGame, logits: np.ndarray) -> float:
    """E over (x, y) of log P(y | x) with h marginalized out."""
    p1 = sigmoid(np.asarray(logits, dtype=np.float64))
    val = 0.0
    for xi in range(2):
        p_y = (1.0 - p1[xi]) * game.p_y_given_h[0] + p1[xi] * game.p_y_given_h[1]
        val += game.p_x[xi] * float(np.dot(game.p_y_given_x[xi], np.log(p_y)))
    return val


def toy_marginal_gradient(game: ToyGame, logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    p1 = sigmoid(logits)
    grad = np.zeros(2)
    for xi in range(2):
        p_y = (1.0 - p1[xi]) * game.p_y_given_h[0] + p1[xi] * game.p_y_given_h[1]
        diff = game.p_y_given_h[1] - game.p_y_given_h[0]
        grad[xi] = (
            game.p_x[xi]
            * p1[xi] * (1.0 - p1[xi])
            * float(np.dot(game.p_y_given_x[xi], diff / p_y))
        )
    return grad


def toy_expected_c1(game: ToyGame, logits: np.ndarray) -> float:
    """E over (x, y) and h ~ P(h|x) of the single-particle criterion log P(y|h)."""
    p1 = sigmoid(np.asarray(logits, dtype=np.float64))
    log_pyh = np.log(game.p_y_given_h)
    val = 0.0
    for xi in range(2):
        per_h = log_pyh @ game.p_y_given_x[xi]  # (2,): E_y log P(y|h)
        val += game.p_x[xi] * ((1.0 - p1[xi]) * per_h[0] + p1[xi] * per_h[1])
    return float(val)


def toy_ascend_marginal(
    game: ToyGame,
    init_probs: Tuple[float, float] = (0.4, 0.6),
    steps: int = 2000,
    lr: float = 2.0,
    record_every: int = 0,
) -> ToyAscentResult:
    """Deterministic gradient ascent on the marginal criterion."""
    logits = np.log(np.asarray(init_probs)) - np.log1p(-np.asarray(init_probs))
    history = []
    for t in range(steps):
        if record_every and t % record_every == 0:
            p = sigmoid(logits)
            history.append((t, float(p[0]), float(p[1]), toy_marginal_criterion(game, logits)))
        logits = logits + lr * toy_marginal_gradient(game, logits)
    probs = sigmoid(logits)
    return ToyAscentResult(
        mode="marginal", logits=logits, probs=probs,
        value=toy_marginal_criterion(game, logits),
        corner=toy_is_corner(probs), steps=steps, history=history,
    )


def toy_ascend_sampled_c1(
    game: ToyGame,
    rng: RngStream,
    init_probs: Tuple[float, float] = (0.4, 0.6),
    steps: int = 20000,
    lr: float = 0.5,
    record_every: int = 0,
) -> ToyAscentResult:
    """Stochastic ascent on the single-particle criterion.

    Each step samples (x, y) from the data and h from the current policy and
    applies the likelihood-ratio update (h - sigma) log P(y|h). Because both
    h values explain the 50/50 labels equally well on average, the drift is
    zero everywhere; the update is a bounded martingale in sigma whose step
    variance vanishes only at 0 and 1, so trajectories are absorbed at
    deterministic corners rather than the interior optimum.
    """
    logits = (np.log(np.asarray(init_probs)) - np.log1p(-np.asarray(init_probs))).astype(
        np.float64
    )
    u = rng.uniform((steps, 3))
    log_pyh = np.log(game.p_y_given_h)
    history = []
    for t in range(steps):
        if record_every and t % record_every == 0:
            p = sigmoid(logits)
            history.append((t, float(p[0]), float(p[1]), toy_expected_c1(game, logits)))
        xi = int(u[t, 0] < game.p_x[1])
        yi = int(u[t, 1] < game.p_y_given_x[xi, 1])
        s = 1.0 / (1.0 + math.exp(-logits[xi]))
        h = int(u[t, 2] < s)
        logits[xi] += lr * (h - s) * log_pyh[h, yi]
    probs = sigmoid(logits)
    return ToyAscentResult(
        mode="sampled-c1", logits=logits, probs=probs,
        value=toy_expected_c1(game, logits),
        corner=toy_is_corner(probs), steps=steps, history=history,
    )
