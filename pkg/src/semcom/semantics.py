"""Semantic sources and channels.

Two kinds: dataset-backed image channels (MNIST quadrants for four agents)
and fully enumerable discrete toy chains used by the exact oracles in
`infotheory`. Each dataset example is treated as one realization of the
(class, image) pair.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatchError, MagicNumberError, TruncatedFileError
from .infotheory import JointPmf

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# canonical uncompressed MNIST files
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

MNIST_SHA256 = {
    "train-images-idx3-ubyte":
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte":
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte":
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte":
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}


@dataclass
class DatasetHandle:
    images: np.ndarray  # (N, H, W, 1) in [0, 1]
    labels: np.ndarray  # (N,) integers in [0, M)
    split: str = "train"
    n_classes: int = 10

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, n):
        if n is None or n >= len(self):
            return self
        return DatasetHandle(self.images[:n], self.labels[:n], self.split,
                             self.n_classes)


def _read_idx(path, expected_magic, what):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: too short for an IDX header")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise MagicNumberError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x} "
            f"for {what}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX dimension list")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise TruncatedFileError(
            f"{path}: payload holds {len(raw) - header} bytes, header "
            f"promises {count}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header, count=count)
    return data.reshape(dims)


def load_mnist_idx(images_path, labels_path, split="train", dtype=np.float64):
    """Parse a big-endian IDX image/label pair into a DatasetHandle.

    Pixels are scaled by 1/255 into [0, 1]; no mean subtraction.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} has {images.shape[0]} images but {labels_path} "
            f"has {labels.shape[0]} labels")
    scaled = (images.astype(dtype) / dtype(255.0))[..., None]
    return DatasetHandle(scaled, labels.astype(np.int64), split=split)


def split_quadrants(image):
    """Split (..., H, W, C) into four quadrants: TL, TR, BL, BR.

    Returns an array with a new axis of size 4 inserted before H. Stitching
    the four quadrants back together is an exact inverse.
    """
    image = np.asarray(image)
    h, w = image.shape[-3], image.shape[-2]
    if h % 2 or w % 2:
        raise ValueError(f"quadrant split needs even spatial dims, got {h}x{w}")
    hh, hw = h // 2, w // 2
    parts = [image[..., :hh, :hw, :], image[..., :hh, hw:, :],
             image[..., hh:, :hw, :], image[..., hh:, hw:, :]]
    return np.stack(parts, axis=-4)


def stitch_quadrants(quadrants):
    """Inverse of split_quadrants."""
    q = np.asarray(quadrants)
    tl, tr, bl, br = (q[..., i, :, :, :] for i in range(4))
    top = np.concatenate([tl, tr], axis=-2)
    bottom = np.concatenate([bl, br], axis=-2)
    return np.concatenate([top, bottom], axis=-3)


class EpochSampler:
    """Without-replacement batch sampler; epoch order is a seeded permutation."""

    def __init__(self, n, batch_size, seed=0, rng=None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.n = int(n)
        self.batch_size = int(batch_size)
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def epoch(self):
        """Yield index arrays covering every example exactly once."""
        order = self.rng.permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            yield order[start:start + self.batch_size]


def sample_batch(dataset, batch_size, rng):
    """One uniform without-replacement batch of (quadrants, labels).

    Quadrants have shape (B, 4, H/2, W/2, C). For epoch-structured sampling
    use EpochSampler and index the dataset directly.
    """
    idx = rng.permutation(len(dataset))[:batch_size]
    return split_quadrants(dataset.images[idx]), dataset.labels[idx]


@dataclass
class ToyChainSpec:
    """A fully enumerable chain z -> s -> x -> y of conditional tables."""

    prior_z: np.ndarray        # (Z,)
    p_s_given_z: np.ndarray    # (Z, S)
    p_x_given_s: np.ndarray    # (S, X)
    p_y_given_x: np.ndarray    # (X, Y)
    x_components: tuple = field(default=())  # optional factorization of X

    def __post_init__(self):
        self.prior_z = np.asarray(self.prior_z, dtype=np.float64)
        self.p_s_given_z = np.asarray(self.p_s_given_z, dtype=np.float64)
        self.p_x_given_s = np.asarray(self.p_x_given_s, dtype=np.float64)
        self.p_y_given_x = np.asarray(self.p_y_given_x, dtype=np.float64)
        for name, card in zip("zsxy", self.cardinalities):
            if card > 16:
                raise ValueError(f"|{name}| = {card} exceeds the toy cap of 16")
        self._check_rows("p(z)", self.prior_z[None, :])
        self._check_rows("p(s|z)", self.p_s_given_z)
        self._check_rows("p(x|s)", self.p_x_given_s)
        self._check_rows("p(y|x)", self.p_y_given_x)
        if (self.p_s_given_z.shape[0] != self.prior_z.shape[0]
                or self.p_x_given_s.shape[0] != self.p_s_given_z.shape[1]
                or self.p_y_given_x.shape[0] != self.p_x_given_s.shape[1]):
            raise ValueError("conditional table shapes do not chain")

    @staticmethod
    def _check_rows(name, table):
        if np.any(table < 0):
            raise ValueError(f"{name} has negative entries")
        sums = table.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(f"{name} rows must sum to 1 (max deviation "
                             f"{np.max(np.abs(sums - 1.0)):.3e})")

    @property
    def cardinalities(self):
        return (self.prior_z.shape[0], self.p_s_given_z.shape[1],
                self.p_x_given_s.shape[1], self.p_y_given_x.shape[1])


def enumerate_joint(spec):
    """Explicit joint table p(z,s,x,y) = p(z) p(s|z) p(x|s) p(y|x)."""
    z, s, x, y = spec.cardinalities
    if z * s * x * y > 65536:
        raise ValueError(f"state space {z * s * x * y} exceeds 65536")
    table = np.einsum("z,zs,sx,xy->zsxy", spec.prior_z, spec.p_s_given_z,
                      spec.p_x_given_s, spec.p_y_given_x)
    return JointPmf(("z", "s", "x", "y"), table)
