"""Evaluation-side analyses: particle curves, centering scans, sample grids.

The particle curve exploits nested draws: the particles used at M' < M are
the first M' of the M-particle evaluation, so curves across particle counts
are paired per example and monotonicity checks see no resampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .estimators import responsibilities
from .forward import forward_sample
from .mathutils import log_sum_exp, sigmoid
from .network import Architecture, Params
from .rng import RngStream
from .training import TaskSplit


@dataclass
class ParticleCurve:
    m_values: List[int]
    per_example: np.ndarray  # (N, len(m_values)) criterion values
    mean: np.ndarray
    se: np.ndarray


def particle_curve(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    m_values: Sequence[int],
    rng: RngStream,
    max_examples: Optional[int] = None,
    chunk: int = 0,
) -> ParticleCurve:
    """C_hat_m per example for every m, from one forward pass at max(m)."""
    m_values = sorted(int(m) for m in m_values)
    if m_values[0] < 1:
        raise ValueError("particle counts must be >= 1")
    m_max = m_values[-1]
    n = split.n if max_examples is None else min(split.n, max_examples)
    if chunk <= 0:
        width = max(arch.layer_sizes)
        chunk = max(1, min(512, int(2_000_000 / max(1, m_max * width))))
    values = np.empty((n, len(m_values)))
    for start in range(0, n, chunk):
        ids = range(start, min(start + chunk, n))
        x = split.inputs[list(ids)]
        y = split.targets[list(ids)]
        streams = [rng.substream(i) for i in ids]
        trace = forward_sample(params, arch, x, m_max, streams, y=y, phase="test")
        log_py = trace.log_py
        rows = slice(start, start + len(log_py))
        if log_py.shape[1] == 1:
            # A deterministic pass carries one particle; every mixture size
            # averages identical copies, so the curve is flat by construction.
            values[rows, :] = log_py[:, [0] * len(m_values)]
        else:
            for k, m in enumerate(m_values):
                values[rows, k] = log_sum_exp(log_py[:, :m], axis=1) - np.log(m)
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(m_values))
    return ParticleCurve(m_values=m_values, per_example=values, mean=mean, se=se)


def scan_centering(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    m: int,
    cm_values: Sequence[float],
    rng: RngStream,
    n_examples: int = 100,
) -> List[dict]:
    """Mean per-example first-layer gradient norm across centerings c = cM / M.

    The first hidden layer's weight gradient for one example is the outer
    product of the particle-summed unit signal with the input, so its
    Frobenius norm factors into the two vector norms; the scan reuses one
    forward pass per example across the whole grid.
    """
    if arch.is_hybrid or arch.deterministic_forward:
        raise ValueError("the centering scan needs sampled first-layer units")
    if m < 2:
        raise ValueError("centered responsibilities need at least two particles")
    n = min(n_examples, split.n)
    x = split.inputs[:n]
    y = split.targets[:n]
    streams = [rng.substream("scan", i) for i in range(n)]
    trace = forward_sample(params, arch, x, m, streams, y=y, phase="test")
    w = responsibilities(trace)  # (B, M)
    eps = trace.act[0] - trace.prob[0]  # (B, M, n1)
    x_norm = np.linalg.norm(trace.x, axis=1)  # (B,)
    rows = []
    for cm in cm_values:
        coeff = w - float(cm) / m
        s = np.einsum("bm,bmn->bn", coeff, eps)
        norms = np.linalg.norm(s, axis=1) * x_norm
        se = norms.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        rows.append({"cm": float(cm), "mean_norm": float(norms.mean()), "se": float(se)})
    return rows


def pairwise_distances(samples: np.ndarray) -> np.ndarray:
    """Euclidean distances between all sample pairs: (m, d) -> (m*(m-1)/2,)."""
    m = samples.shape[0]
    out = []
    for i in range(m):
        for j in range(i + 1, m):
            out.append(float(np.linalg.norm(samples[i] - samples[j])))
    return np.array(out)


def draw_samples(
    params: Params,
    arch: Architecture,
    x: np.ndarray,
    n_samples: int,
    rng: RngStream,
) -> np.ndarray:
    """Per-particle predicted target intensities for one input -> (n, d_out).

    Bernoulli heads return sigmoid(o); Gaussian heads return o. Deterministic
    networks produce one unique prediction, replicated to keep the shape.
    """
    trace = forward_sample(params, arch, x, n_samples, rng, phase="test")
    if arch.output_kind == "bernoulli":
        preds = sigmoid(trace.out_pre[0])
    elif arch.output_kind == "gaussian":
        preds = trace.out_pre[0]
    else:
        raise ValueError("sampling visualizes bernoulli or gaussian heads")
    if preds.shape[0] == 1 and n_samples > 1:
        preds = np.repeat(preds, n_samples, axis=0)
    return preds


def build_sample_grid(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    indices: Sequence[int],
    n_samples: int,
    rng: RngStream,
    height: int = 28,
    width: int = 28,
    gap: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of [original | masked input | samples...] as one uint8 image.

    Returns (grid, samples) with samples float (len(indices), n_samples, d).
    Inputs are the top half of each image and predictions fill the bottom.
    """
    half = height // 2
    cells_per_row = 2 + n_samples
    grid_h = len(indices) * height + (len(indices) + 1) * gap
    grid_w = cells_per_row * width + (cells_per_row + 1) * gap
    grid = np.full((grid_h, grid_w), 255, dtype=np.uint8)
    all_samples = np.empty((len(indices), n_samples, split.targets.shape[1]))

    def paste(r, c, cell):
        top = gap + r * (height + gap)
        left = gap + c * (width + gap)
        grid[top : top + height, left : left + width] = np.clip(
            np.round(cell * 255.0), 0, 255
        ).astype(np.uint8)

    for r, idx in enumerate(indices):
        x = split.inputs[idx]
        y = split.targets[idx]
        original = np.concatenate([x, y]).reshape(height, width)
        masked = np.concatenate([x, np.full_like(y, 0.5)]).reshape(height, width)
        paste(r, 0, original)
        paste(r, 1, masked)
        preds = draw_samples(params, arch, x, n_samples, rng.substream("grid", int(idx)))
        all_samples[r] = preds
        for s in range(n_samples):
            cell = np.concatenate([x, preds[s]]).reshape(height, width)
            paste(r, 2 + s, cell)
    return grid, all_samples


def write_pgm(path, image: np.ndarray) -> None:
    """Plain-text (P2) PGM, one raster row per line."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images are 2-D")
    with open(path, "w") as f:
        f.write("P2\n")
        f.write(f"{image.shape[1]} {image.shape[0]}\n255\n")
        for row in image:
            f.write(" ".join(str(int(v)) for v in row))
            f.write("\n")


def load_pgm(path) -> np.ndarray:
    with open(path) as f:
        tokens = f.read().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.int64)
    if data.size != w * h or maxval != 255:
        raise ValueError(f"{path}: malformed PGM payload")
    if data.min() < 0 or data.max() > 255:
        raise ValueError(f"{path}: pixel values outside [0, 255]")
    return data.astype(np.uint8).reshape(h, w)
