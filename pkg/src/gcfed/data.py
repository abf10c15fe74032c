"""Dataset ingestion: synthetic Gaussian-mixture tasks and IDX image files."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, IdxFormatError
from .seeding import substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Gaussian mixture with equidistant class centers.

    Centers are scaled one-hot directions, so every pair of classes sits at
    exactly ``separation`` apart; ``noise_sigma`` controls overlap.
    """

    num_classes: int = 10
    input_dim: int = 32
    separation: float = 3.0
    noise_sigma: float = 1.0
    samples_per_class: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic task needs >= 2 classes")
        if self.input_dim < self.num_classes:
            raise ConfigError("input_dim must be >= num_classes for equidistant centers")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be > 0")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")


def generate_synthetic(spec: SyntheticTaskSpec):
    """Build (train_x, train_y, test_x, test_y), deterministic per seed.

    Within each class, every fifth sample goes to the test split (an 80/20
    split by sample index), keeping class priors uniform to within one
    sample in both splits.
    """
    rng = substream(spec.seed, "synthetic")
    scale = spec.separation / np.sqrt(2.0)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(spec.num_classes):
        center = np.zeros(spec.input_dim)
        center[c] = scale
        points = center + spec.noise_sigma * rng.normal(size=(spec.samples_per_class,
                                                              spec.input_dim))
        idx = np.arange(spec.samples_per_class)
        is_test = (idx % 5) == 4
        train_x.append(points[~is_test])
        test_x.append(points[is_test])
        train_y.append(np.full((~is_test).sum(), c, dtype=np.int64))
        test_y.append(np.full(is_test.sum(), c, dtype=np.int64))
    return (np.concatenate(train_x), np.concatenate(train_y),
            np.concatenate(test_x), np.concatenate(test_y))


def _read_idx_header(raw: bytes, path, expected_magic: int, expected_dims: int):
    header_len = 4 + 4 * expected_dims
    if len(raw) < header_len:
        raise IdxFormatError(
            f"{path}: truncated header, need {header_len} bytes, file has {len(raw)}"
        )
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{expected_dims}I", raw[4:header_len])
    return dims, header_len


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into float64 [N, 1, H, W] scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (count, rows, cols), offset = _read_idx_header(raw, path, IDX_IMAGES_MAGIC, 3)
    expected = count * rows * cols
    payload = raw[offset:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: expected {expected} pixel bytes after offset {offset}, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, 1, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into an int64 vector."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (count,), offset = _read_idx_header(raw, path, IDX_LABELS_MAGIC, 1)
    payload = raw[offset:]
    if len(payload) != count:
        raise IdxFormatError(
            f"{path}: expected {count} label bytes after offset {offset}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, num_classes: int = None):
    """Load a matched image/label pair, optionally enforcing a class range."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images_path} holds {images.shape[0]} images but "
            f"{labels_path} holds {labels.shape[0]} labels"
        )
    if num_classes is not None:
        bad = np.where(labels >= num_classes)[0]
        if bad.size:
            raise DataError(
                f"{labels_path}: label {int(labels[bad[0]])} at sample {int(bad[0])} "
                f"outside [0, {num_classes})"
            )
    return images, labels
