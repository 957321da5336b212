"""Training loop, learning-rate schedule, evaluation, and the LR grid search.

Updates are plain SGD with heavy-ball momentum on the ascent direction:
v <- 0.9 v + lr * g, theta <- theta + v. The learning rate follows a
triangle: linear warmup from zero over the first five epochs, then linear
decay to zero at the final epoch.

Randomness is keyed by purpose, epoch, and global example id, never by batch
position, so the same seed gives the same run regardless of how examples are
chunked, and evaluation draws are identical every time they are requested.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import StructuredPairs
from .estimators import BaselineState, ESTIMATOR_IDS, apply_estimator, responsibilities
from .forward import criterion_hat, forward_sample, predict_proba
from .network import Architecture, GradientSet, Params, all_finite, init_params
from .rng import RngStream

LR_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)


class DivergenceError(RuntimeError):
    """A run produced non-finite values or fell far below its starting point."""


class AllDivergedError(RuntimeError):
    """Every learning rate in the grid diverged."""


@dataclass
class TaskSplit:
    """One split of a task: inputs (N, d); targets are labels (N,) for
    softmax heads and float matrices (N, q) otherwise."""

    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @staticmethod
    def from_pairs(pairs: StructuredPairs) -> "TaskSplit":
        return TaskSplit(inputs=pairs.inputs, targets=pairs.targets)


@dataclass
class TrainConfig:
    estimator: str = "g3"
    m_train: int = 1
    m_test: int = 100
    epochs: int = 15
    max_lr: float = 0.01
    batch_size: int = 100
    momentum: float = 0.9
    input_noise_sd: float = 0.0   # classification-only Gaussian input noise
    g5_c: Optional[float] = None  # None means 1/M
    seed: int = 0
    shuffle: bool = True
    eval_every: int = 1
    eval_examples: Optional[int] = None  # cap evaluation set size; None = all
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_IDS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.m_train < 1 or self.m_test < 1:
            raise ValueError("particle counts must be >= 1")
        if self.estimator in ("g4", "g5") and self.m_train < 2:
            raise ValueError(f"{self.estimator} needs at least two particles to compare")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if 0 < self.epochs <= 5:
            raise ValueError("the triangle schedule needs more than five epochs "
                             "(or zero to skip training)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class TrainResult:
    params: Params
    arch: Architecture
    config: TrainConfig
    records: List[dict] = field(default_factory=list)
    diverged: bool = False
    divergence_reason: str = ""
    final_metrics: Dict[str, float] = field(default_factory=dict)


def lr_at(t: float, epochs: int, max_lr: float) -> float:
    """Triangle schedule over normalized progress t in [0, 1].

    Rises linearly to max_lr at epoch five, then decays linearly to zero at
    the final epoch; needs more than five epochs to be well defined.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"progress t must be in [0, 1], got {t}")
    if epochs <= 5:
        raise ValueError("the triangle schedule needs more than five epochs")
    te = t * epochs
    if te <= 5.0:
        return max_lr * te / 5.0
    return max_lr * (epochs - te) / (epochs - 5.0)


def sgd_step(
    params: Params,
    grads: GradientSet,
    velocity: GradientSet,
    lr: float,
    momentum: float = 0.9,
) -> None:
    """In-place heavy-ball ascent step; raises on non-finite gradients."""
    if not all_finite(grads):
        raise DivergenceError("non-finite gradient")
    for k, g in grads.items():
        v = velocity[k]
        v *= momentum
        v += lr * g
        params[k] += v


def evaluate_structured(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    m: int,
    rng: RngStream,
    max_examples: Optional[int] = None,
    chunk: int = 0,
) -> Dict[str, float]:
    """Mean negative criterion at M particles (plus SSE for Gaussian heads).

    Per-example streams are keyed by position in the split, so repeated
    evaluations with the same stream are identical draw for draw.
    """
    n = split.n if max_examples is None else min(split.n, max_examples)
    if chunk <= 0:
        width = max(arch.layer_sizes)
        chunk = max(1, min(512, int(2_000_000 / max(1, m * width))))
    total_crit = 0.0
    total_sse = 0.0
    for start in range(0, n, chunk):
        ids = range(start, min(start + chunk, n))
        x = split.inputs[list(ids)]
        y = split.targets[list(ids)]
        streams = [rng.substream(i) for i in ids]
        trace = forward_sample(params, arch, x, m, streams, y=y, phase="test")
        total_crit += float(np.sum(criterion_hat(trace)))
        if arch.output_kind == "gaussian":
            w = responsibilities(trace)
            pred = np.einsum("bm,bmk->bk", w, trace.out_pre)
            total_sse += float(np.sum((np.asarray(y) - pred) ** 2))
    out = {"neg_criterion": -total_crit / n}
    if arch.output_kind == "gaussian":
        out["mean_sse"] = total_sse / n
    return out


def evaluate_classification(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    m: int,
    rng: RngStream,
    max_examples: Optional[int] = None,
    chunk: int = 0,
) -> Dict[str, float]:
    """Error rate of the mean-probability classifier at M particles."""
    n = split.n if max_examples is None else min(split.n, max_examples)
    if chunk <= 0:
        width = max(arch.layer_sizes)
        chunk = max(1, min(512, int(2_000_000 / max(1, m * width))))
    wrong = 0
    for start in range(0, n, chunk):
        ids = range(start, min(start + chunk, n))
        x = split.inputs[list(ids)]
        streams = [rng.substream(i) for i in ids]
        probs = predict_proba(params, arch, x, m, streams, phase="test")
        pred = np.argmax(probs, axis=1)
        wrong += int(np.sum(pred != split.targets[list(ids)]))
    return {"error_rate": wrong / n}


def evaluate(
    params: Params,
    arch: Architecture,
    split: TaskSplit,
    m: int,
    rng: RngStream,
    max_examples: Optional[int] = None,
) -> Dict[str, float]:
    if arch.output_kind == "softmax":
        return evaluate_classification(params, arch, split, m, rng, max_examples)
    return evaluate_structured(params, arch, split, m, rng, max_examples)


def _probe_criterion(
    params: Params, arch: Architecture, split: TaskSplit, config: TrainConfig, root: RngStream
) -> float:
    n = min(500, split.n)
    streams = [root.substream("probe", i) for i in range(n)]
    trace = forward_sample(
        params, arch, split.inputs[:n], config.m_train, streams, y=split.targets[:n]
    )
    return float(np.mean(criterion_hat(trace)))


def train(
    arch: Architecture,
    config: TrainConfig,
    train_split: TaskSplit,
    test_split: Optional[TaskSplit] = None,
) -> TrainResult:
    """Run the full schedule; returns the trained parameters and metric rows.

    Zero epochs returns the seeded initialization untouched. A divergent run
    (non-finite values, or a criterion divergence_factor times worse than the
    untrained probe after epoch 2) stops early and is flagged, not raised.
    """
    root = RngStream(config.seed)
    params = init_params(arch, root.substream("init-params"))
    result = TrainResult(params=params, arch=arch, config=config)
    if config.epochs == 0:
        if test_split is not None:
            result.final_metrics = evaluate(
                params, arch, test_split, config.m_test, root.substream("eval"),
                config.eval_examples,
            )
        return result

    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    baselines = BaselineState(arch) if config.estimator == "g1" else None
    probe = _probe_criterion(params, arch, train_split, config, root)
    floor = probe - (config.divergence_factor - 1.0) * abs(probe)
    n = train_split.n
    n_batches = (n + config.batch_size - 1) // config.batch_size
    classification = arch.output_kind == "softmax"

    for epoch in range(config.epochs):
        order = (
            root.substream("shuffle", epoch).permutation(n)
            if config.shuffle
            else np.arange(n)
        )
        crit_sum, crit_count = 0.0, 0
        for bi in range(n_batches):
            ids = order[bi * config.batch_size : (bi + 1) * config.batch_size]
            x = train_split.inputs[ids]
            y = train_split.targets[ids]
            if classification and config.input_noise_sd > 0.0:
                noise = np.stack(
                    [
                        root.substream("noise", epoch, int(i)).normal(
                            x.shape[1], scale=config.input_noise_sd
                        )
                        for i in ids
                    ]
                )
                x = x + noise
            streams = [root.substream("sample", epoch, int(i)) for i in ids]
            try:
                trace = forward_sample(params, arch, x, config.m_train, streams, y=y)
                crit = criterion_hat(trace)
                if not np.isfinite(crit).all():
                    raise DivergenceError("non-finite criterion")
                grads, stats = apply_estimator(
                    config.estimator, params, arch, trace,
                    criterion=crit, baselines=baselines, g5_c=config.g5_c,
                )
                t = (epoch * n_batches + bi) / (config.epochs * n_batches)
                sgd_step(params, grads, velocity, lr_at(t, config.epochs, config.max_lr),
                         config.momentum)
            except DivergenceError as e:
                result.diverged = True
                result.divergence_reason = f"epoch {epoch}: {e}"
                return result
            if baselines is not None and stats is not None:
                baselines.update(stats)
            crit_sum += float(np.sum(crit))
            crit_count += len(ids)
        mean_crit = crit_sum / crit_count
        result.records.append(
            {"epoch": epoch, "split": "train", "metric": "criterion", "value": mean_crit}
        )
        if epoch >= 2 and mean_crit < floor:
            result.diverged = True
            result.divergence_reason = (
                f"epoch {epoch}: criterion {mean_crit:.4g} fell past the divergence "
                f"floor {floor:.4g} (untrained probe {probe:.4g})"
            )
            return result
        last = epoch == config.epochs - 1
        if test_split is not None and ((epoch + 1) % config.eval_every == 0 or last):
            metrics = evaluate(
                params, arch, test_split, config.m_test, root.substream("eval"),
                config.eval_examples,
            )
            for name, value in metrics.items():
                result.records.append(
                    {"epoch": epoch, "split": "test", "metric": name, "value": value}
                )
            if last:
                result.final_metrics = metrics
    return result


@dataclass
class GridSearchResult:
    best_lr: float
    best_result: TrainResult
    runs: List[Tuple[float, TrainResult]]
    selection_metric: str


def grid_search(
    arch: Architecture,
    config: TrainConfig,
    train_split: TaskSplit,
    test_split: TaskSplit,
    val_split: Optional[TaskSplit] = None,
    grid: Sequence[float] = LR_GRID,
) -> GridSearchResult:
    """Train once per learning rate and keep the best finisher.

    Selection uses validation error when a validation split is supplied
    (classification), otherwise the test metric. Lower is better for every
    metric involved; ties keep the smaller learning rate. Divergent runs are
    recorded but never selected; if everything diverges, that is an error.
    """
    metric_name = "error_rate" if arch.output_kind == "softmax" else "neg_criterion"
    runs: List[Tuple[float, TrainResult]] = []
    best_lr, best_result, best_score = None, None, np.inf
    for lr in grid:
        result = train(arch, replace(config, max_lr=lr), train_split, test_split)
        runs.append((lr, result))
        if result.diverged:
            continue
        if val_split is not None:
            root = RngStream(config.seed)
            score = evaluate(
                result.params, arch, val_split, config.m_test,
                root.substream("eval-val"), config.eval_examples,
            )[metric_name]
            result.final_metrics[f"val_{metric_name}"] = score
        else:
            score = result.final_metrics[metric_name]
        if score < best_score or (score == best_score and lr < best_lr):
            best_lr, best_result, best_score = lr, result, score
    if best_result is None:
        raise AllDivergedError("every learning rate in the grid diverged")
    return GridSearchResult(
        best_lr=best_lr, best_result=best_result, runs=runs,
        selection_metric=metric_name,
    )


CSV_COLUMNS = (
    "run_id", "estimator", "variant", "m_train", "max_lr",
    "seed", "epoch", "split", "metric", "value",
)


def write_metrics_csv(path, results: Sequence[TrainResult], run_ids: Optional[Sequence[str]] = None) -> None:
    """One row per recorded metric, float values at full precision."""
    if run_ids is None:
        run_ids = [f"run{i}" for i in range(len(results))]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for run_id, result in zip(run_ids, results):
            cfg = result.config
            for rec in result.records:
                writer.writerow(
                    [
                        run_id, cfg.estimator, result.arch.variant, cfg.m_train,
                        f"{cfg.max_lr:.17g}", cfg.seed, rec["epoch"], rec["split"],
                        rec["metric"], f"{rec['value']:.17g}",
                    ]
                )
