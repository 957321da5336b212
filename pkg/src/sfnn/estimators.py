"""Gradient estimators for the M-particle mixture criterion.

All estimators share the exact output-layer gradient: with responsibilities
w_bar (the softmax of per-particle log-likelihoods), the criterion's gradient
through the output pre-activation of particle m is
G(o_m) = w_bar_m * d log P(y | o_m) / d o_m, which V and c accumulate over
particles, and G(h_m) = V^T G(o_m) is the signal entering the top hidden
layer. No extra 1/M appears; w_bar already carries the mixture weights.

They differ in how the signal treats sampled binary units:

- g1: likelihood-ratio update (h - sigma(a)) * (C_hat - baseline_i) with a
  per-(layer, unit) moving baseline, averaged over particles.
- g2: pass G(h) straight through, as if dh/da were 1.
- g3: multiply by sigma'(a) on the way through (exact backprop when the
  forward pass is deterministic; id "backprop" is the same code path).
- g4: per-particle score term w_bar * (h - sigma(a)), conditioned on the
  realized layer below; no propagation through sampled units.
- g5: g4 with a centering constant, (w_bar - c) * (h - sigma(a)), c = 1/M
  by default.

Gradients returned are ascent directions on the criterion, averaged over the
batch (or combined with explicit per-example weights).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .forward import ParticleTrace, criterion_hat
from .mathutils import softmax
from .network import Architecture, GradientSet, Params

ESTIMATOR_IDS = ("g1", "g2", "g3", "g4", "g5", "backprop")


def responsibilities(trace: ParticleTrace) -> np.ndarray:
    """Per-particle mixture weights w_bar -> (B, M); rows sum to 1."""
    if trace.log_py is None:
        raise ValueError("trace has no targets; responsibilities need log P(y|h)")
    return softmax(trace.log_py, axis=1)


def _example_weights(trace: ParticleTrace, weights: Optional[np.ndarray]) -> np.ndarray:
    b = trace.batch_size
    if weights is None:
        return np.full(b, 1.0 / b)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (b,):
        raise ValueError(f"example weights must be ({b},), got {weights.shape}")
    return weights


def output_gradient(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    example_weights: Optional[np.ndarray] = None,
) -> Tuple[GradientSet, np.ndarray, np.ndarray]:
    """Exact criterion gradient for V, c plus the top-layer signal.

    Returns (grads with V and c, gh (B, M, top), w_bar (B, M)).
    """
    wgt = _example_weights(trace, example_weights)
    w_bar = responsibilities(trace)
    o = trace.out_pre
    y = trace.y
    if arch.output_kind == "softmax":
        dlog = -softmax(o, axis=-1)
        rows = np.arange(o.shape[0])[:, None]
        labels = np.asarray(y).reshape(-1, 1)
        np.add.at(dlog, (rows, slice(None), labels), 1.0)
    elif arch.output_kind == "bernoulli":
        from .mathutils import sigmoid

        dlog = np.asarray(y, dtype=np.float64)[:, None, :] - sigmoid(o)
    elif arch.output_kind == "gaussian":
        dlog = np.asarray(y, dtype=np.float64)[:, None, :] - o
    else:
        raise ValueError(f"unknown output kind {arch.output_kind!r}")
    go = w_bar[:, :, None] * dlog
    go_w = go * wgt[:, None, None]
    b, m, k = go_w.shape
    feat = trace.top_feat
    if feat.shape[1] != m:
        feat = np.broadcast_to(feat, (b, m, feat.shape[2]))
    grads: GradientSet = {
        "V": go_w.reshape(b * m, k).T @ feat.reshape(b * m, -1),
        "c": go_w.sum(axis=(0, 1)),
    }
    gh = go @ params["V"]
    return grads, gh, w_bar


def _accumulate(
    grads: GradientSet,
    w_name: str,
    b_name: str,
    delta: np.ndarray,
    prev: np.ndarray,
    wgt: np.ndarray,
    scale: float = 1.0,
) -> None:
    """Fold delta (B, M, n) against the layer input into weight/bias grads.

    prev is either (B, p) shared across particles (network input) or
    (B, M, p) per-particle activations; the shared case collapses delta over
    particles before the outer product, which keeps the first layer cheap.
    """
    weighted = delta * wgt[:, None, None]
    b, m, n = weighted.shape
    if prev.ndim == 2:
        dw = weighted.sum(axis=1).T @ prev
    else:
        if prev.shape[1] != m:
            prev = np.broadcast_to(prev, (b, m, prev.shape[2]))
        dw = weighted.reshape(b * m, n).T @ prev.reshape(b * m, -1)
    db = weighted.sum(axis=(0, 1))
    if scale != 1.0:
        dw *= scale
        db *= scale
    grads[w_name] = grads.get(w_name, 0.0) + dw
    grads[b_name] = grads.get(b_name, 0.0) + db


def _hybrid_cat(trace: ParticleTrace, layer: int) -> np.ndarray:
    """Reassemble [prev_d; s] the deterministic sub-units of `layer` read."""
    s = trace.stoch_act[layer - 1]
    prev = trace.act[layer - 2] if layer > 1 else trace.x[:, None, :]
    b, m = s.shape[0], s.shape[1]
    return np.concatenate([np.broadcast_to(prev, (b, m, prev.shape[-1])), s], axis=2)


def _propagated_hidden_grads(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    gh: np.ndarray,
    wgt: np.ndarray,
    stoch_jacobian: Optional[str],
) -> GradientSet:
    """Backpropagate gh through the hidden stack.

    Deterministic (sigmoid) units always use their true Jacobian. Sampled
    binary units use dh/da := 1 ("unit"), sigma'(a) ("sigmoid_prime"), or are
    treated as constants (None: no gradient into or through them).
    """
    grads: GradientSet = {}
    if arch.is_hybrid:
        nd_top = arch.hybrid_split[-1][1]
        g_d = gh[:, :, :nd_top]
        g_s_direct = gh[:, :, nd_top:] if arch.output_reads_stochastic else None
        for l in range(arch.n_hidden, 0, -1):
            d = trace.act[l - 1]
            delta_d = g_d * d * (1.0 - d)
            cat = _hybrid_cat(trace, l)
            _accumulate(grads, f"Wd{l}", f"bd{l}", delta_d, cat, wgt)
            gcat = delta_d @ params[f"Wd{l}"]
            p_dim = arch.feed_dim(l)
            g_prev = gcat[:, :, :p_dim]
            g_s = gcat[:, :, p_dim:]
            if l == arch.n_hidden and g_s_direct is not None:
                g_s = g_s + g_s_direct
            if arch.variant == "hybrid" and stoch_jacobian is not None:
                if stoch_jacobian == "sigmoid_prime":
                    p_s = trace.stoch_prob[l - 1]
                    delta_s = g_s * p_s * (1.0 - p_s)
                else:
                    delta_s = g_s
                prev = trace.act[l - 2] if l > 1 else trace.x
                _accumulate(grads, f"Ws{l}", f"bs{l}", delta_s, prev, wgt)
                g_prev = g_prev + delta_s @ params[f"Ws{l}"]
            g_d = g_prev
        return grads

    # Plain stack. A deterministic trace stores h = sigma(a), whose true
    # Jacobian is sigma'; sampled units follow stoch_jacobian.
    g = gh
    for l in range(arch.n_hidden, 0, -1):
        p = trace.prob[l - 1]
        use_unit = stoch_jacobian == "unit" and not trace.deterministic
        if stoch_jacobian is None and not trace.deterministic:
            raise ValueError("plain sampled units cannot be skipped during propagation")
        delta = g if use_unit else g * p * (1.0 - p)
        prev = trace.act[l - 2] if l > 1 else trace.x
        _accumulate(grads, f"W{l}", f"b{l}", delta, prev, wgt)
        if l > 1:
            g = delta @ params[f"W{l}"]
    return grads


def _score_epsilon(trace: ParticleTrace, arch: Architecture, layer: int) -> np.ndarray:
    """(h - sigma(a)) for the sampled binary units of `layer` -> (B, M, n)."""
    if arch.is_hybrid:
        return trace.stoch_act[layer - 1] - trace.stoch_prob[layer - 1]
    return trace.act[layer - 1] - trace.prob[layer - 1]


def _score_prev(trace: ParticleTrace, layer: int) -> np.ndarray:
    """What the sampled units of `layer` read from below."""
    return trace.act[layer - 2] if layer > 1 else trace.x


def _stochastic_param_names(arch: Architecture, layer: int) -> Optional[Tuple[str, str]]:
    if arch.is_hybrid:
        if arch.variant == "hybrid":
            return f"Ws{layer}", f"bs{layer}"
        return None  # hybrid-fixed: Bernoulli(0.5) units have no parameters
    return f"W{layer}", f"b{layer}"


def estimate_g2(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    example_weights: Optional[np.ndarray] = None,
) -> GradientSet:
    """Straight-through: sampled units pass the signal with dh/da := 1."""
    wgt = _example_weights(trace, example_weights)
    grads, gh, _ = output_gradient(params, arch, trace, example_weights)
    grads.update(_propagated_hidden_grads(params, arch, trace, gh, wgt, "unit"))
    return grads


def estimate_g3(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    example_weights: Optional[np.ndarray] = None,
) -> GradientSet:
    """Sigmoid-derivative pass-through; exact backprop on deterministic passes."""
    wgt = _example_weights(trace, example_weights)
    grads, gh, _ = output_gradient(params, arch, trace, example_weights)
    grads.update(_propagated_hidden_grads(params, arch, trace, gh, wgt, "sigmoid_prime"))
    return grads


def estimate_g4(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    example_weights: Optional[np.ndarray] = None,
) -> GradientSet:
    """Responsibility-weighted score term per sampled unit.

    Each sampled layer's parameters get sum_m w_bar_m (h - sigma(a)) x outer
    with the realized layer below; nothing propagates through sampled units.
    Hybrid deterministic sub-units still receive full backprop from above.
    """
    return _score_estimator(params, arch, trace, example_weights, center=0.0)


def estimate_g5(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    c: Optional[float] = None,
    example_weights: Optional[np.ndarray] = None,
) -> GradientSet:
    """g4 with centered responsibilities (w_bar - c); c defaults to 1/M."""
    m = trace.log_py.shape[1] if trace.log_py is not None else trace.m
    if c is None:
        c = 1.0 / m
    return _score_estimator(params, arch, trace, example_weights, center=float(c))


def _score_estimator(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    example_weights: Optional[np.ndarray],
    center: float,
) -> GradientSet:
    wgt = _example_weights(trace, example_weights)
    grads, gh, w_bar = output_gradient(params, arch, trace, example_weights)
    coeff = (w_bar - center)[:, :, None]
    for l in range(1, arch.n_hidden + 1):
        names = _stochastic_param_names(arch, l)
        if names is None:
            continue
        delta = coeff * _score_epsilon(trace, arch, l)
        _accumulate(grads, names[0], names[1], delta, _score_prev(trace, l), wgt)
    if arch.is_hybrid:
        grads.update(_propagated_hidden_grads(params, arch, trace, gh, wgt, None))
    return grads


@dataclass
class BaselineStats:
    """Per-batch moments feeding the g1 baselines: one pair per sampled layer."""

    num: List[np.ndarray]  # mean of (h - sigma)^2 * C_hat per unit
    den: List[np.ndarray]  # mean of (h - sigma)^2 per unit


def baseline_shapes(arch: Architecture) -> List[int]:
    """Widths of the per-layer baseline vectors (sampled units only)."""
    if arch.variant == "hybrid":
        return [ns for ns, _ in arch.hybrid_split]
    if arch.variant == "hybrid-fixed":
        return []
    if arch.variant == "deterministic":
        return []
    return list(arch.hidden_sizes)


class BaselineState:
    """Per-(layer, unit) moving baseline L_bar = EMA[num] / EMA[den].

    num tracks (h - sigma)^2-weighted criterion, den the weights themselves;
    both decay with rho = 0.9. The first observed batch seeds the averages,
    so the gradient for that batch is computed against a zero baseline and
    the state updates afterwards. The denominator is floored to keep units
    that almost never deviate from their mean activation well defined.
    """

    def __init__(self, arch: Architecture, decay: float = 0.9, floor: float = 1e-30):
        self.shapes = baseline_shapes(arch)
        self.decay = float(decay)
        self.floor = float(floor)
        self.num = [np.zeros(n) for n in self.shapes]
        self.den = [np.zeros(n) for n in self.shapes]
        self.initialized = False

    def values(self) -> List[np.ndarray]:
        if not self.initialized:
            return [np.zeros(n) for n in self.shapes]
        return [n / np.maximum(d, self.floor) for n, d in zip(self.num, self.den)]

    def update(self, stats: BaselineStats) -> None:
        if len(stats.num) != len(self.shapes):
            raise ValueError("baseline stats do not match the architecture")
        if not self.initialized:
            self.num = [s.copy() for s in stats.num]
            self.den = [s.copy() for s in stats.den]
            self.initialized = True
            return
        r = self.decay
        for i in range(len(self.num)):
            self.num[i] = r * self.num[i] + (1.0 - r) * stats.num[i]
            self.den[i] = r * self.den[i] + (1.0 - r) * stats.den[i]


def estimate_g1(
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    criterion: Optional[np.ndarray] = None,
    baselines: Optional[BaselineState] = None,
    example_weights: Optional[np.ndarray] = None,
) -> Tuple[GradientSet, BaselineStats]:
    """Likelihood-ratio estimator with per-unit baselines.

    Sampled unit i in layer l gets (h_i - sigma(a_i)) (C_hat - L_bar_{l,i}),
    averaged over the M particles. Returns the gradients together with this
    batch's baseline moments; the caller folds them into the BaselineState
    after the update (never before).
    """
    wgt = _example_weights(trace, example_weights)
    grads, gh, _ = output_gradient(params, arch, trace, example_weights)
    if criterion is None:
        criterion = criterion_hat(trace)
    criterion = np.asarray(criterion, dtype=np.float64)
    m = trace.log_py.shape[1]
    lbar = baselines.values() if baselines is not None else None
    num_stats: List[np.ndarray] = []
    den_stats: List[np.ndarray] = []
    sampled_layers = [
        l for l in range(1, arch.n_hidden + 1) if _stochastic_param_names(arch, l) is not None
    ]
    for idx, l in enumerate(sampled_layers):
        eps = _score_epsilon(trace, arch, l)
        lb = lbar[idx] if lbar is not None else 0.0
        advantage = criterion[:, None, None] - lb
        delta = eps * advantage
        names = _stochastic_param_names(arch, l)
        _accumulate(grads, names[0], names[1], delta, _score_prev(trace, l), wgt, scale=1.0 / m)
        eps2w = eps * eps * wgt[:, None, None]
        num_stats.append((eps2w * criterion[:, None, None]).sum(axis=(0, 1)) / m)
        den_stats.append(eps2w.sum(axis=(0, 1)) / m)
    if arch.is_hybrid:
        grads.update(_propagated_hidden_grads(params, arch, trace, gh, wgt, None))
    return grads, BaselineStats(num=num_stats, den=den_stats)


def apply_estimator(
    estimator: str,
    params: Params,
    arch: Architecture,
    trace: ParticleTrace,
    criterion: Optional[np.ndarray] = None,
    baselines: Optional[BaselineState] = None,
    g5_c: Optional[float] = None,
    example_weights: Optional[np.ndarray] = None,
) -> Tuple[GradientSet, Optional[BaselineStats]]:
    """Single dispatch over estimator ids; "backprop" shares the g3 path."""
    if estimator == "g1":
        return estimate_g1(params, arch, trace, criterion, baselines, example_weights)
    if estimator == "g2":
        return estimate_g2(params, arch, trace, example_weights), None
    if estimator in ("g3", "backprop"):
        return estimate_g3(params, arch, trace, example_weights), None
    if estimator == "g4":
        return estimate_g4(params, arch, trace, example_weights), None
    if estimator == "g5":
        return estimate_g5(params, arch, trace, g5_c, example_weights), None
    raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATOR_IDS}")
