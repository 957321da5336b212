"""Network architecture, parameter containers, and checkpoint serialization.

Parameters live in a plain dict mapping name -> float64 ndarray. Naming:

- plain variants: ``W1, b1, ..., WL, bL`` for hidden layers, ``V, c`` output.
- hybrid variants: per hidden layer, stochastic sub-units ``Ws{l}, bs{l}``
  (absent for hybrid-fixed, whose stochastic units are parameterless
  Bernoulli(0.5)) and deterministic sub-units ``Wd{l}, bd{l}``. ``Wd{l}``
  packs the within-layer connection from the stochastic sub-units into its
  trailing ``ns`` columns, so every record stays a (matrix, bias) pair.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .rng import RngStream

Params = Dict[str, np.ndarray]
GradientSet = Dict[str, np.ndarray]

VARIANTS = ("stochastic", "deterministic", "det-stochastic-eval", "hybrid", "hybrid-fixed")
OUTPUT_KINDS = ("softmax", "bernoulli", "gaussian")

CHECKPOINT_MAGIC = b"SFNN"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised on bad magic, version, truncation, or malformed records."""


@dataclass(frozen=True)
class Architecture:
    """Shape and behavior of one network.

    layer_sizes: (d_in, n_1, ..., n_L, d_out) with L >= 1 hidden layers.
    hybrid_split: per hidden layer (n_stochastic, n_deterministic); required
        for hybrid variants, with ns + nd equal to the layer size.
    output_reads_stochastic: hybrid only; when True the output layer reads
        the concatenation [d_L; s_L] instead of just d_L.
    """

    layer_sizes: Tuple[int, ...]
    output_kind: str = "softmax"
    variant: str = "stochastic"
    hybrid_split: Optional[Tuple[Tuple[int, int], ...]] = None
    output_reads_stochastic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 3:
            raise ValueError("layer_sizes needs input, at least one hidden, output")
        if any(n <= 0 for n in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.is_hybrid:
            if self.hybrid_split is None:
                raise ValueError("hybrid variants require hybrid_split")
            split = tuple((int(a), int(b)) for a, b in self.hybrid_split)
            object.__setattr__(self, "hybrid_split", split)
            if len(split) != self.n_hidden:
                raise ValueError("hybrid_split must list every hidden layer")
            for (ns, nd), n in zip(split, self.hidden_sizes):
                if ns < 1 or nd < 1 or ns + nd != n:
                    raise ValueError(
                        f"hybrid split ({ns}, {nd}) incompatible with layer size {n}"
                    )
        else:
            if self.hybrid_split is not None:
                raise ValueError("hybrid_split only applies to hybrid variants")
            if self.output_reads_stochastic:
                raise ValueError("output_reads_stochastic only applies to hybrid variants")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return self.layer_sizes[1:-1]

    @property
    def is_hybrid(self) -> bool:
        return self.variant in ("hybrid", "hybrid-fixed")

    @property
    def deterministic_forward(self) -> bool:
        """True when the training-time forward pass has no sampling."""
        return self.variant in ("deterministic", "det-stochastic-eval")

    def stochastic_unit_count(self) -> int:
        """Total count of binary sampled units (for enumeration budgets)."""
        if self.variant == "deterministic":
            return 0
        if self.is_hybrid:
            return sum(ns for ns, _ in self.hybrid_split)
        return sum(self.hidden_sizes)

    def feed_dim(self, layer: int) -> int:
        """Width of what layer `layer` (1-based) receives from below."""
        if layer == 1:
            return self.d_in
        if self.is_hybrid:
            return self.hybrid_split[layer - 2][1]
        return self.layer_sizes[layer - 1]

    def top_feature_dim(self) -> int:
        """Width of the feature vector the output layer reads."""
        if self.is_hybrid:
            ns, nd = self.hybrid_split[-1]
            return nd + (ns if self.output_reads_stochastic else 0)
        return self.layer_sizes[-2]

    def param_layout(self) -> List[Tuple[str, str, int, int]]:
        """Canonical record order: (matrix name, bias name, rows, cols)."""
        layout = []
        for l in range(1, self.n_hidden + 1):
            prev = self.feed_dim(l)
            if self.is_hybrid:
                ns, nd = self.hybrid_split[l - 1]
                if self.variant == "hybrid":
                    layout.append((f"Ws{l}", f"bs{l}", ns, prev))
                layout.append((f"Wd{l}", f"bd{l}", nd, prev + ns))
            else:
                layout.append((f"W{l}", f"b{l}", self.layer_sizes[l], prev))
        layout.append(("V", "c", self.d_out, self.top_feature_dim()))
        return layout

    def to_json_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "output_kind": self.output_kind,
            "variant": self.variant,
            "hybrid_split": [list(p) for p in self.hybrid_split] if self.hybrid_split else None,
            "output_reads_stochastic": self.output_reads_stochastic,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "Architecture":
        split = d.get("hybrid_split")
        return Architecture(
            layer_sizes=tuple(d["layer_sizes"]),
            output_kind=d["output_kind"],
            variant=d["variant"],
            hybrid_split=tuple(tuple(p) for p in split) if split else None,
            output_reads_stochastic=bool(d.get("output_reads_stochastic", False)),
        )


def init_params(arch: Architecture, rng: RngStream) -> Params:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero biases."""
    params: Params = {}
    for w_name, b_name, rows, cols in arch.param_layout():
        r = np.sqrt(6.0 / (rows + cols))
        u = rng.substream("init", w_name).uniform((rows, cols))
        params[w_name] = (2.0 * u - 1.0) * r
        params[b_name] = np.zeros(rows, dtype=np.float64)
    return params


def zero_params(arch: Architecture) -> Params:
    return {
        name: np.zeros((rows, cols) if name == wn else rows, dtype=np.float64)
        for wn, bn, rows, cols in arch.param_layout()
        for name in (wn, bn)
    }


def zeros_like_params(params: Params) -> GradientSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def check_shapes(arch: Architecture, params: Params) -> None:
    layout = arch.param_layout()
    expected = {}
    for w_name, b_name, rows, cols in layout:
        expected[w_name] = (rows, cols)
        expected[b_name] = (rows,)
    if set(params) != set(expected):
        raise ValueError(
            f"parameter names {sorted(params)} do not match layout {sorted(expected)}"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def all_finite(arrays: Dict[str, np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays.values())


# ---------------------------------------------------------------------------
# Checkpoint format (little-endian):
#   magic "SFNN" | version u8 | header_len u32 | header JSON (architecture)
#   | n_records u32 | records
# Each record: rows u32 | cols u32 | rows*cols f64 matrix (row-major)
#   | rows f64 bias.
# ---------------------------------------------------------------------------

def save_checkpoint(path, arch: Architecture, params: Params) -> None:
    check_shapes(arch, params)
    header = json.dumps(arch.to_json_dict(), sort_keys=True).encode("utf-8")
    layout = arch.param_layout()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(layout)))
        for w_name, b_name, rows, cols in layout:
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(params[w_name], dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(params[b_name], dtype="<f8").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> Tuple[Architecture, Params]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<B", _read_exact(f, 1, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, header_len, "header"))
            arch = Architecture.from_json_dict(header)
        except (ValueError, KeyError, TypeError) as e:
            raise CheckpointFormatError(f"malformed checkpoint header: {e}") from e
        (n_records,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
        layout = arch.param_layout()
        if n_records != len(layout):
            raise CheckpointFormatError(
                f"checkpoint holds {n_records} records, architecture needs {len(layout)}"
            )
        params: Params = {}
        for w_name, b_name, rows, cols in layout:
            r, c = struct.unpack("<II", _read_exact(f, 8, f"{w_name} dims"))
            if (r, c) != (rows, cols):
                raise CheckpointFormatError(
                    f"{w_name}: checkpoint record is {r}x{c}, architecture wants {rows}x{cols}"
                )
            w = np.frombuffer(_read_exact(f, 8 * rows * cols, w_name), dtype="<f8")
            b = np.frombuffer(_read_exact(f, 8 * rows, b_name), dtype="<f8")
            params[w_name] = w.reshape(rows, cols).astype(np.float64)
            params[b_name] = b.astype(np.float64)
        if f.read(1):
            raise CheckpointFormatError("trailing bytes after final checkpoint record")
    return arch, params
