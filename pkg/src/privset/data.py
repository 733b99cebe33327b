"""Dataset ingestion, sampling and the synthetic-set container."""

from __future__ import annotations

import gzip
import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
PSG_MAGIC = b"PSGSET\0"
PSG_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file (bad magic, bad header, unparsable content)."""


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class ContainerError(ValueError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class IntegrityError(ContainerError):
    pass


@dataclass(frozen=True)
class Normalization:
    mean: float
    std: float

    def apply(self, x):
        return ((np.asarray(x, dtype=np.float32) - self.mean) / self.std).astype(np.float32)

    def invert(self, x):
        return np.asarray(x, dtype=np.float32) * self.std + self.mean


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable labelled data.

    ``role`` tags provenance ("train", "test", "train:partition3", ...) so that
    evaluation code can refuse private training features.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalization: Normalization | None = None
    role: str = "train"
    source: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float32)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim < 2 or y.shape != (x.shape[0],):
            raise ValueError("features must be (N, ...) with one label per row")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def data_shape(self):
        return self.features.shape[1:]

    def subset(self, idx, role=None):
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.num_classes,
            self.normalization, role or self.role, self.source,
        )


@dataclass
class SyntheticSet:
    """Learnable features with fixed, balanced labels (``spc`` per class, class-major)."""

    features: np.ndarray
    labels: np.ndarray
    spc: int
    num_classes: int
    role: str = "synthetic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        m = self.spc * self.num_classes
        if self.features.shape[0] != m or self.labels.shape != (m,):
            raise ValueError(f"expected M = spc * L = {m} samples")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if len(counts) != self.num_classes or np.any(counts != self.spc):
            raise ValueError("labels must contain exactly spc samples of every class")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("synthetic features contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def data_shape(self):
        return self.features.shape[1:]

    def copy(self):
        return SyntheticSet(self.features.copy(), self.labels.copy(), self.spc,
                            self.num_classes, self.role)


def balanced_labels(spc, num_classes):
    return np.repeat(np.arange(num_classes), spc)


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, path):
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFileError(f"{path}: header truncated")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    body = raw[4 + 4 * ndim :]
    need = int(np.prod(dims))
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    if len(body) > need:
        raise DataFormatError(f"{path}: {len(body) - need} trailing bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, 3, path)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, 1, path)


def write_idx(path, array):
    a = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES_MAGIC if a.ndim == 3 else IDX_LABELS_MAGIC
    if a.ndim not in (1, 3):
        raise ValueError("IDX writer supports label vectors and image stacks only")
    raw = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()
    if str(path).endswith(".gz"):
        raw = gzip.compress(raw, mtime=0)
    with open(path, "wb") as f:
        f.write(raw)


def load_idx(images_path, labels_path, normalization=None, num_classes=None, role="train",
             downsample=1):
    """Read an IDX image/label pair into a normalized dataset of shape (N, 1, H, W).

    Pixels are scaled to [0, 1]; ``downsample`` > 1 averages non-overlapping
    blocks. With ``normalization=None`` the mean/std of these pixels are
    computed and recorded; pass the training record to replay it on test data.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}"
        )
    if len(images) == 0:
        raise DataFormatError("empty IDX dataset")
    x = images.astype(np.float32)[:, None] / 255.0
    if downsample > 1:
        x = block_average(x, downsample)
    if normalization is None:
        normalization = Normalization(float(x.mean()), float(x.std()) or 1.0)
    L = num_classes or int(labels.max()) + 1
    return LabeledDataset(normalization.apply(x), labels.astype(np.int64), L, normalization,
                          role, str(images_path))


def block_average(x, factor):
    n, c, h, w = x.shape
    h2, w2 = h // factor, w // factor
    x = x[:, :, : h2 * factor, : w2 * factor]
    return x.reshape(n, c, h2, factor, w2, factor).mean((3, 5)).astype(np.float32)


# ---------------------------------------------------------------------------
# CSV: label in the first column, features after


def load_csv(path, normalization=None, num_classes=None, role="train"):
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if table.shape[0] == 0 or table.shape[1] < 2:
        raise DataFormatError(f"{path}: need a label column and at least one feature")
    y = table[:, 0]
    if np.any(y != np.round(y)) or np.any(y < 0):
        raise DataFormatError(f"{path}: labels must be non-negative integers")
    x = table[:, 1:].astype(np.float32)
    if normalization is None:
        normalization = Normalization(float(x.mean()), float(x.std()) or 1.0)
    L = num_classes or int(y.max()) + 1
    return LabeledDataset(normalization.apply(x), y.astype(np.int64), L, normalization, role,
                          str(path))


def save_csv(path, features, labels):
    x = np.asarray(features).reshape(len(labels), -1)
    np.savetxt(path, np.column_stack([labels, x]), delimiter=",", fmt="%.9g")


# ---------------------------------------------------------------------------
# sampling and splits


def poisson_batch(dataset, q, rng):
    """Indices kept independently with probability ``q`` (ascending, maybe empty).

    ``dataset`` may be a dataset or just its size.
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if not 0 < q <= 1:
        raise ValueError("sampling rate must lie in (0, 1]")
    if q == 1:
        return np.arange(n)
    return np.flatnonzero(rng.random(n) < q)


def class_split(dataset: LabeledDataset, partitions):
    """One dataset per class set, preserving the original order."""
    sets = [frozenset(int(c) for c in p) for p in partitions]
    seen = set()
    for s in sets:
        if seen & s:
            raise ValueError(f"class sets overlap on {sorted(seen & s)}")
        if any(c < 0 or c >= dataset.num_classes for c in s):
            raise ValueError("class set outside label range")
        seen |= s
    out = []
    for i, s in enumerate(sets):
        mask = np.isin(dataset.labels, sorted(s))
        missing = s - set(np.unique(dataset.labels[mask]).tolist())
        if missing:
            warnings.warn(f"partition {i}: no examples for classes {sorted(missing)}", stacklevel=2)
        role = f"{dataset.role}:partition{i}"
        out.append(dataset.subset(np.flatnonzero(mask), role=role))
    return out


# ---------------------------------------------------------------------------
# synthetic-set container
#
#   magic    7 bytes  "PSGSET\0"
#   version  u16
#   L        u32
#   spc      u32
#   ndim     u32, then ndim x u32 data-shape extents
#   features M * prod(shape) x f32
#   labels   M x u16
#   crc32    u32 over every preceding byte
#
# all little-endian.


def encode_synthetic(features, labels, num_classes, spc):
    x = np.ascontiguousarray(features, dtype="<f4")
    y = np.asarray(labels)
    if y.shape != (x.shape[0],) or x.shape[0] != num_classes * spc:
        raise ValueError("container expects M = L * spc rows with one label each")
    if y.min() < 0 or y.max() >= num_classes or num_classes > 0xFFFF:
        raise ValueError("labels do not fit the container")
    shape = x.shape[1:]
    head = PSG_MAGIC + struct.pack("<HIII", PSG_VERSION, num_classes, spc, len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    body = head + x.tobytes() + y.astype("<u2").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_synthetic(raw):
    """Inverse of :func:`encode_synthetic`; returns (features, labels, L, spc)."""
    if raw[: len(PSG_MAGIC)] != PSG_MAGIC:
        raise ContainerError("not a PSG container (bad magic)")
    if len(raw) < len(PSG_MAGIC) + 18:
        raise ContainerError("container truncated")
    pos = len(PSG_MAGIC)
    version, L, spc, ndim = struct.unpack_from("<HIII", raw, pos)
    if version != PSG_VERSION:
        raise UnsupportedVersionError(f"container version {version} unsupported")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise IntegrityError("CRC32 mismatch")
    pos += 14
    shape = struct.unpack_from(f"<{ndim}I", raw, pos)
    pos += 4 * ndim
    m = L * spc
    n_feat = m * int(np.prod(shape))
    expected = pos + 4 * n_feat + 2 * m + 4
    if len(raw) != expected:
        raise ContainerError(f"container size {len(raw)} != expected {expected}")
    x = np.frombuffer(raw, dtype="<f4", count=n_feat, offset=pos).reshape((m,) + tuple(shape))
    y = np.frombuffer(raw, dtype="<u2", count=m, offset=pos + 4 * n_feat)
    return x.astype(np.float32), y.astype(np.int64), L, spc


def save_synthetic(syn: SyntheticSet, path):
    raw = encode_synthetic(syn.features, syn.labels, syn.num_classes, syn.spc)
    with open(path, "wb") as f:
        f.write(raw)
    return raw


def load_synthetic(path) -> SyntheticSet:
    with open(path, "rb") as f:
        raw = f.read()
    x, y, L, spc = decode_synthetic(raw)
    return SyntheticSet(x, y, spc, L)


# ---------------------------------------------------------------------------
# image export


def image_grid(features, labels, num_classes, normalization=None, pad=1):
    """Tile (M, 1, H, W) samples into one uint8 image: one row per class.

    With a normalization record the samples are mapped back to pixel scale and
    clamped to [0, 1]; without one they are min-max scaled jointly.
    """
    x = np.asarray(features, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError("image export needs single-channel (M, 1, H, W) features")
    if normalization is not None:
        x = normalization.invert(x)
    elif x.size:
        lo, hi = float(x.min()), float(x.max())
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    x = np.clip(x, 0.0, 1.0)
    labels = np.asarray(labels)
    per_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
    cols = max((len(p) for p in per_class), default=0)
    h, w = x.shape[2:]
    grid = np.zeros((num_classes * (h + pad) + pad, cols * (w + pad) + pad), dtype=np.uint8)
    for r, idx in enumerate(per_class):
        for c, i in enumerate(idx):
            top, left = pad + r * (h + pad), pad + c * (w + pad)
            grid[top : top + h, left : left + w] = np.round(x[i, 0] * 255).astype(np.uint8)
    return grid


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        f.write(image.tobytes())
