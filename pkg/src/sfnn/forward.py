"""Sampling forward pass and the M-particle mixture criterion.

A :class:`ParticleTrace` records everything one forward pass produced for a
minibatch: per-layer pre-activations, probabilities, realized activations,
output pre-activations, and conditional log-likelihoods. Hidden-layer arrays
are (B, M, n); the particle axis may be 1 where the quantity is particle
independent (the first hidden layer's pre-activation, or everything in a
deterministic pass), and every consumer broadcasts against it.

Per-example randomness comes from one RngStream per example; layer l draws
from ``stream.substream("h", l)`` as an (M, n) block in row-major order, so
the draws for M particles are a strict prefix of the draws for any larger
particle count. That gives nested particle subsets for free: evaluating with
M' < M on the same streams reuses the first M' particles exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .mathutils import log_sigmoid_clamped, log_softmax, log_sum_exp, sigmoid, softmax
from .network import Architecture, Params
from .rng import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ParticleTrace:
    """One forward pass of M particles over a batch of B examples."""

    x: np.ndarray                    # (B, d_in)
    m: int                           # particles actually carried
    pre: List[np.ndarray]            # per layer (B, m or 1, n): feeding units' pre-acts
    prob: List[np.ndarray]           # per layer: sigma(pre) (plain) / alias of act (hybrid)
    act: List[np.ndarray]            # per layer: realized forward-feeding activations
    stoch_pre: List[Optional[np.ndarray]]   # hybrid: stochastic sub-unit pre-acts
    stoch_prob: List[Optional[np.ndarray]]  # hybrid: P(s = 1)
    stoch_act: List[Optional[np.ndarray]]   # hybrid: sampled s in {0, 1}
    top_feat: np.ndarray             # (B, m or 1, top): what the output layer read
    out_pre: np.ndarray              # (B, m or 1, d_out)
    deterministic: bool = False      # True when the pass sampled nothing
    y: Optional[np.ndarray] = None
    log_py: Optional[np.ndarray] = None      # (B, m or 1)

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim == 2:
        return x
    raise ValueError(f"inputs must be 1-D or 2-D, got shape {x.shape}")


def _example_streams(rng, batch: int) -> List[RngStream]:
    if isinstance(rng, RngStream):
        if batch == 1:
            return [rng]
        # Convenience path: derive by row. Loops that must be batch-order
        # independent pass one stream per example keyed by global id instead.
        return [rng.substream("row", i) for i in range(batch)]
    streams = list(rng)
    if len(streams) != batch:
        raise ValueError(f"got {len(streams)} streams for batch of {batch}")
    return streams


def _layer_uniforms(streams: Sequence[RngStream], layer: int, m: int, n: int) -> np.ndarray:
    return np.stack([s.substream("h", layer).uniform((m, n)) for s in streams])


def output_log_prob(kind: str, out_pre: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log P(y | o) per particle -> (B, M).

    softmax: y is (B,) integer class labels.
    bernoulli: y is (B, K) in {0, 1}; factorial Bernoulli with logistic means.
    gaussian: y is (B, K); unit-variance Gaussian, normalizer included.
    """
    b, m, k = out_pre.shape
    if kind == "softmax":
        y = np.asarray(y)
        if y.shape != (b,):
            raise ValueError(f"softmax labels must be ({b},), got {y.shape}")
        if y.dtype.kind not in "iu" or np.any(y < 0) or np.any(y >= k):
            raise ValueError("labels must be integers in [0, n_classes)")
        ls = log_softmax(out_pre, axis=-1)
        return np.take_along_axis(ls, y[:, None, None].astype(np.int64), axis=2)[:, :, 0]
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (b, k):
        raise ValueError(f"targets must be ({b}, {k}), got {y.shape}")
    if kind == "bernoulli":
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise ValueError("bernoulli targets must lie in [0, 1]")
        return np.einsum("bk,bmk->bm", y, log_sigmoid_clamped(out_pre)) + np.einsum(
            "bk,bmk->bm", 1.0 - y, log_sigmoid_clamped(-out_pre)
        )
    if kind == "gaussian":
        diff = y[:, None, :] - out_pre
        return -0.5 * np.einsum("bmk,bmk->bm", diff, diff) - 0.5 * k * LOG_2PI
    raise ValueError(f"unknown output kind {kind!r}")


def forward_sample(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    m: int,
    rng: Union[RngStream, Sequence[RngStream]],
    y: Optional[np.ndarray] = None,
    phase: str = "train",
) -> ParticleTrace:
    """Sample M particles per example and record the full trace.

    Deterministic passes (variant "deterministic" always; variant
    "det-stochastic-eval" when phase == "train") carry a single particle
    since all would be identical; the trace then has m == 1 regardless of
    the requested count and is independent of ``rng``.
    """
    if phase not in ("train", "test"):
        raise ValueError(f"phase must be 'train' or 'test', got {phase!r}")
    if m < 1:
        raise ValueError("particle count must be >= 1")
    x = _as_batch(x).copy()
    batch = x.shape[0]
    deterministic = arch.variant == "deterministic" or (
        arch.variant == "det-stochastic-eval" and phase == "train"
    )
    if deterministic:
        m = 1
        streams: List[RngStream] = []
    else:
        streams = _example_streams(rng, batch)

    pre, prob, act = [], [], []
    stoch_pre, stoch_prob, stoch_act = [], [], []
    prev = x[:, None, :]  # (B, 1, d_in)
    for l in range(1, arch.n_hidden + 1):
        if arch.is_hybrid:
            ns, nd = arch.hybrid_split[l - 1]
            if arch.variant == "hybrid":
                a_s = prev @ params[f"Ws{l}"].T + params[f"bs{l}"]
                p_s = sigmoid(a_s)
            else:
                a_s = None
                p_s = np.full((batch, 1, ns), 0.5)
            u = _layer_uniforms(streams, l, m, ns)
            s = (u < p_s).astype(np.float64)
            cat = np.concatenate([np.broadcast_to(prev, (batch, m, prev.shape[2])), s], axis=2)
            a_d = cat @ params[f"Wd{l}"].T + params[f"bd{l}"]
            d = sigmoid(a_d)
            stoch_pre.append(a_s)
            stoch_prob.append(p_s)
            stoch_act.append(s)
            pre.append(a_d)
            prob.append(d)
            act.append(d)
            prev = d
        else:
            a = prev @ params[f"W{l}"].T + params[f"b{l}"]
            p = sigmoid(a)
            if deterministic:
                h = p
            else:
                u = _layer_uniforms(streams, l, m, arch.layer_sizes[l])
                h = (u < p).astype(np.float64)
            stoch_pre.append(None)
            stoch_prob.append(None)
            stoch_act.append(None)
            pre.append(a)
            prob.append(p)
            act.append(h)
            prev = h

    if arch.is_hybrid and arch.output_reads_stochastic:
        top = np.concatenate(
            [np.broadcast_to(act[-1], (batch, m, act[-1].shape[2])), stoch_act[-1]], axis=2
        )
    else:
        top = act[-1]
    out_pre = top @ params["V"].T + params["c"]

    trace = ParticleTrace(
        x=x, m=m, pre=pre, prob=prob, act=act,
        stoch_pre=stoch_pre, stoch_prob=stoch_prob, stoch_act=stoch_act,
        top_feat=top, out_pre=out_pre, deterministic=deterministic,
    )
    if y is not None:
        attach_targets(trace, arch, y)
    return trace


def attach_targets(trace: ParticleTrace, arch: Architecture, y: np.ndarray) -> None:
    """Store targets and per-particle conditional log-likelihoods."""
    if arch.output_kind == "softmax":
        y = np.asarray(y)
        if y.ndim == 0:
            y = y[None]
    else:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
    trace.y = y
    trace.log_py = output_log_prob(arch.output_kind, trace.out_pre, y)


def criterion_hat(trace: ParticleTrace) -> np.ndarray:
    """C_hat_M per example: logsumexp of log P(y | h_m) minus log M -> (B,)."""
    if trace.log_py is None:
        raise ValueError("trace has no targets; pass y to forward_sample")
    m = trace.log_py.shape[1]
    return log_sum_exp(trace.log_py, axis=1) - np.log(m)


def criterion_fixed_hidden(
    params: Params, arch: Architecture, trace: ParticleTrace, y: Optional[np.ndarray] = None
) -> np.ndarray:
    """Recompute the criterion from the trace's stored top features.

    Only the output parameters V, c are read from ``params``; the hidden
    configurations stay frozen. Useful for probing the criterion as a
    function of output parameters at fixed particles.
    """
    if y is None:
        y = trace.y
    out_pre = trace.top_feat @ params["V"].T + params["c"]
    log_py = output_log_prob(arch.output_kind, out_pre, y)
    return log_sum_exp(log_py, axis=1) - np.log(log_py.shape[1])


def predict_proba(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    m: int,
    rng: Union[RngStream, Sequence[RngStream]],
    phase: str = "test",
) -> np.ndarray:
    """Mean softmax class probabilities over M particles -> (B, K)."""
    if arch.output_kind != "softmax":
        raise ValueError("class prediction requires a softmax output")
    trace = forward_sample(params, arch, x, m, rng, phase=phase)
    return softmax(trace.out_pre, axis=-1).mean(axis=1)


def predict_class(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    m: int,
    rng: Union[RngStream, Sequence[RngStream]],
    phase: str = "test",
) -> np.ndarray:
    """argmax of mean class probabilities; ties resolve to the lowest index."""
    return np.argmax(predict_proba(params, arch, x, m, rng, phase=phase), axis=1)
