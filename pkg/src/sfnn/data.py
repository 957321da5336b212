"""Datasets: IDX image files, binarization, halves pairs, synthetic groups.

IDX is the big-endian format used by the classic handwritten-digit corpus:
magic bytes (0, 0, dtype, ndim), one u32 per dimension, then the payload.
Only the unsigned-byte dtype (0x08) is supported, giving magic 2051 for rank
3 image files and 2049 for rank 1 label files.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .rng import RngStream, bernoulli

IDX_UBYTE = 0x08
IMAGE_MAGIC = 2051  # ubyte, rank 3
LABEL_MAGIC = 2049  # ubyte, rank 1


class IdxError(ValueError):
    """Base class for IDX file problems."""


class IdxMagicError(IdxError):
    """The magic number is not an unsigned-byte IDX signature."""


class IdxTruncatedError(IdxError):
    """The file ended before the header or payload was complete."""


class IdxDimensionError(IdxError):
    """The declared dimensions do not match the payload size."""


def save_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (rank taken from the array)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX ubyte files need uint8 data, got {array.dtype}")
    array = np.ascontiguousarray(array)
    if array.ndim < 1 or array.ndim > 255:
        raise ValueError("IDX rank must be between 1 and 255")
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, IDX_UBYTE, array.ndim))
        for dim in array.shape:
            f.write(struct.pack(">I", dim))
        f.write(array.tobytes())


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file into a uint8 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the 4-byte magic")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0 or dtype != IDX_UBYTE:
        raise IdxMagicError(
            f"{path}: magic {raw[:4].hex()} is not an unsigned-byte IDX signature"
        )
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxTruncatedError(f"{path}: header declares {ndim} dims but ends early")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = 1
    for d in dims:
        count *= d
    if count > (1 << 40):
        raise IdxDimensionError(f"{path}: declared size {dims} is implausibly large")
    payload = raw[header_end:]
    if len(payload) < count:
        raise IdxTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, header wants {count}"
        )
    if len(payload) > count:
        raise IdxDimensionError(
            f"{path}: {len(payload) - count} trailing bytes beyond the declared dims"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


@dataclass
class ImageDataset:
    """Flat images plus optional labels. images are float64 (N, d)."""

    images: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass
class StructuredPairs:
    """Input/target pairs for conditional generation tasks."""

    inputs: np.ndarray
    targets: np.ndarray
    group_ids: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def load_idx_images(images_path, labels_path=None) -> ImageDataset:
    """Load an IDX image file (and labels) as flat float64 rows in [0, 255]."""
    images = load_idx(images_path)
    if images.ndim != 3:
        raise IdxDimensionError(f"{images_path}: expected rank-3 images, got rank {images.ndim}")
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    labels = None
    if labels_path is not None:
        labels = load_idx(labels_path)
        if labels.ndim != 1:
            raise IdxDimensionError(f"{labels_path}: expected rank-1 labels")
        if labels.shape[0] != images.shape[0]:
            raise IdxDimensionError(
                f"label count {labels.shape[0]} does not match image count {images.shape[0]}"
            )
        labels = labels.astype(np.int64)
    return ImageDataset(images=flat, labels=labels, meta={"height": images.shape[1], "width": images.shape[2]})


def binarize(images: np.ndarray, rng: RngStream) -> np.ndarray:
    """Sample pixels once as Bernoulli(intensity); intensities must be in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("binarize expects intensities in [0, 1]; rescale first")
    return bernoulli(images, rng)


def split_halves(images: np.ndarray, height: int = 28, width: int = 28) -> StructuredPairs:
    """Top rows (0 .. height/2 - 1) predict bottom rows, both flattened."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images.reshape(images.shape[0], height, width)
    half = images.shape[1] // 2
    top = images[:, :half, :].reshape(images.shape[0], -1)
    bottom = images[:, half:, :].reshape(images.shape[0], -1)
    return StructuredPairs(inputs=top, targets=bottom, meta={"height": images.shape[1], "width": images.shape[2]})


def preprocess_classification(
    train_images: np.ndarray, test_images: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    """Scale raw byte intensities to [0, 1] and subtract the train pixel mean.

    The training mean is reused for the test set. Returns (train, test, mean).
    """
    train = np.asarray(train_images, dtype=np.float64) / 255.0
    mean = train.mean(axis=0)
    train = train - mean
    test = None
    if test_images is not None:
        test = np.asarray(test_images, dtype=np.float64) / 255.0 - mean
    return train, test, mean


# ---------------------------------------------------------------------------
# Synthetic multimodal conditional data: groups with K modes each; the input
# is the mode average, each target is one mode plus noise. Groups are split
# disjointly between train and test so test groups are entirely unseen.
# ---------------------------------------------------------------------------

def synthetic_multimodal(
    rng: RngStream,
    n_train_groups: int = 100,
    n_test_groups: int = 31,
    dim: int = 64,
    modes_per_group: int = 5,
    examples_per_group: int = 10,
    noise_sd: float = 0.1,
) -> Tuple[StructuredPairs, StructuredPairs]:
    def build(tag: str, n_groups: int, id_offset: int) -> StructuredPairs:
        inputs, targets, gids = [], [], []
        for g in range(n_groups):
            gid = id_offset + g
            sub = rng.substream("group", tag, g)
            modes = sub.substream("modes").uniform((modes_per_group, dim))
            center = modes.mean(axis=0)
            noise = sub.substream("noise").normal((examples_per_group, dim), scale=noise_sd)
            for j in range(examples_per_group):
                inputs.append(center)
                targets.append(modes[j % modes_per_group] + noise[j])
                gids.append(gid)
        return StructuredPairs(
            inputs=np.array(inputs), targets=np.array(targets),
            group_ids=np.array(gids, dtype=np.int64),
            meta={"dim": dim, "modes_per_group": modes_per_group, "noise_sd": noise_sd},
        )

    train = build("train", n_train_groups, 0)
    test = build("test", n_test_groups, n_train_groups)
    return train, test


def save_synthetic_csv(path, pairs: StructuredPairs) -> None:
    """CSV rows (group_id, role, values...): one input and one target row per example."""
    dim = pairs.inputs.shape[1]
    gids = pairs.group_ids if pairs.group_ids is not None else np.zeros(pairs.n, dtype=np.int64)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["group_id", "role"] + [f"v{i}" for i in range(dim)])
        for i in range(pairs.n):
            writer.writerow([int(gids[i]), "input"] + [f"{v:.17g}" for v in pairs.inputs[i]])
            writer.writerow([int(gids[i]), "target"] + [f"{v:.17g}" for v in pairs.targets[i]])


def load_synthetic_csv(path) -> StructuredPairs:
    inputs, targets, gids = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["group_id", "role"]:
            raise ValueError(f"{path}: expected header starting with group_id, role")
        pending = None
        for row in reader:
            gid, role, values = int(row[0]), row[1], np.array([float(v) for v in row[2:]])
            if role == "input":
                if pending is not None:
                    raise ValueError(f"{path}: two input rows without a target between them")
                pending = (gid, values)
            elif role == "target":
                if pending is None or pending[0] != gid:
                    raise ValueError(f"{path}: target row without a matching input row")
                inputs.append(pending[1])
                targets.append(values)
                gids.append(gid)
                pending = None
            else:
                raise ValueError(f"{path}: unknown role {role!r}")
        if pending is not None:
            raise ValueError(f"{path}: trailing input row without a target")
    return StructuredPairs(
        inputs=np.array(inputs), targets=np.array(targets),
        group_ids=np.array(gids, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Offline handwritten-digit surrogate. The bundled scikit-learn digits are
# real 8x8 handwriting; upsampling plus small seeded affine jitter yields a
# 28x28 corpus with the same interface as the classic files. Base images are
# split between train and test BEFORE augmentation so no source image leaks
# across the boundary.
# ---------------------------------------------------------------------------

def handwritten_digit_surrogate(
    rng: RngStream,
    n_train: int = 10000,
    n_test: int = 2000,
    image_size: int = 28,
    test_fraction_of_base: float = 0.28,
) -> Tuple[ImageDataset, ImageDataset]:
    from scipy import ndimage
    from sklearn.datasets import load_digits

    base = load_digits()
    images8 = base.images / 16.0  # (N, 8, 8) in [0, 1]
    labels = base.target.astype(np.int64)
    n_base = images8.shape[0]
    order = rng.substream("base-split").permutation(n_base)
    n_test_base = int(round(n_base * test_fraction_of_base))
    test_idx, train_idx = order[:n_test_base], order[n_test_base:]

    zoom = image_size / 8.0
    upsampled = np.stack([ndimage.zoom(img, zoom, order=1) for img in images8])
    upsampled = np.clip(upsampled, 0.0, 1.0)

    def augment(tag: str, idx: np.ndarray, count: int) -> ImageDataset:
        sub = rng.substream("augment", tag)
        out = np.empty((count, image_size, image_size))
        out_labels = np.empty(count, dtype=np.int64)
        picks = sub.substream("pick").choice(idx.shape[0], size=count)
        angles = sub.substream("angle").uniform(count) * 24.0 - 12.0
        scales = 0.85 + sub.substream("scale").uniform(count) * 0.25
        shifts = sub.substream("shift").uniform((count, 2)) * 4.0 - 2.0
        center = (image_size - 1) / 2.0
        for i in range(count):
            img = upsampled[idx[picks[i]]]
            rot = ndimage.rotate(img, angles[i], reshape=False, order=1, mode="constant")
            matrix = np.eye(2) / scales[i]
            offset = center - matrix @ (np.array([center, center]) + shifts[i])
            out[i] = np.clip(
                ndimage.affine_transform(rot, matrix, offset=offset, order=1, mode="constant"),
                0.0, 1.0,
            )
            out_labels[i] = labels[idx[picks[i]]]
        flat = np.round(out.reshape(count, -1) * 255.0).astype(np.uint8)
        return ImageDataset(
            images=flat, labels=out_labels,
            meta={"height": image_size, "width": image_size, "source": "digits-surrogate"},
        )

    return augment("train", train_idx, n_train), augment("test", test_idx, n_test)


def write_idx_pair(directory, prefix: str, dataset: ImageDataset, height: int = 28, width: int = 28) -> Tuple[Path, Path]:
    """Write images and labels as (prefix)-images-idx3-ubyte / -labels-idx1-ubyte."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = dataset.images.reshape(dataset.n, height, width)
    img_path = directory / f"{prefix}-images-idx3-ubyte"
    lbl_path = directory / f"{prefix}-labels-idx1-ubyte"
    save_idx(img_path, np.clip(images, 0, 255).astype(np.uint8))
    if dataset.labels is None:
        raise ValueError("dataset has no labels to write")
    save_idx(lbl_path, dataset.labels.astype(np.uint8))
    return img_path, lbl_path
