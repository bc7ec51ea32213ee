"""Dataset ingestion (CIFAR-10 binary, MNIST IDX), augmentation and PGM/PPM images."""
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .tensor import resolve_dtype

DATA_DIR_ENV = "GHOSTCONV_DATA_DIR"

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def default_data_dir():
    return os.environ.get(DATA_DIR_ENV, "data")


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W), normalized
    labels: np.ndarray  # (N,) int64
    num_classes: int
    mean: np.ndarray
    std: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, count, seed=0):
        """A seeded random subset of ``count`` examples (all of them if fewer exist)."""
        idx = np.random.default_rng(seed).permutation(len(self))[:count]
        idx.sort()
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.mean, self.std, self.split)


def normalize(raw, mean=None, std=None, dtype=None):
    """Scale uint8 pixels to [0, 1], then standardize per channel.

    Statistics are computed from ``raw`` unless given (use the training
    split's statistics for the test split).
    """
    x = raw.astype(np.float64) / 255.0
    if mean is None:
        mean = x.mean(axis=(0, 2, 3))
        std = x.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
    x = (x - mean[None, :, None, None]) / std[None, :, None, None]
    return x.astype(resolve_dtype(dtype)), np.asarray(mean), np.asarray(std)


def _read_bytes(path):
    with open(path, "rb") as f:
        buf = f.read()
    if str(path).endswith(".gz"):
        buf = gzip.decompress(buf)
    return buf


def _find(root, name):
    for cand in (name, name.replace("-idx", ".idx"), name + ".gz", name.replace("-idx", ".idx") + ".gz"):
        path = os.path.join(root, cand)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{name} not found under {root}")


# -- MNIST --------------------------------------------------------------------

def read_idx(path, expected_magic):
    buf = _read_bytes(path)
    if len(buf) < 4:
        raise FormatError("truncated IDX header", path, len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise FormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", path, 0)
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise FormatError("truncated IDX header", path, len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    need = int(np.prod(dims, dtype=np.int64))
    if len(buf) - head < need:
        raise FormatError(f"truncated IDX payload: need {need} bytes after header", path, len(buf))
    if len(buf) - head > need:
        raise FormatError("trailing bytes after IDX payload", path, head + need)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=head).reshape(dims)


def ingest_mnist(root=None, split="train", mean=None, std=None, dtype=None, num_classes=10):
    """Load an MNIST split from the four standard IDX files under ``root``."""
    root = root or default_data_dir()
    img_name, lbl_name = MNIST_FILES[split]
    img_path, lbl_path = _find(root, img_name), _find(root, lbl_name)
    images = read_idx(img_path, MNIST_IMAGE_MAGIC)
    labels = read_idx(lbl_path, MNIST_LABEL_MAGIC)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", lbl_path)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} >= {num_classes}", lbl_path, 8 + int(bad[0]))
    x, mean, std = normalize(images[:, None, :, :], mean, std, dtype)
    return Dataset(x, labels.astype(np.int64), num_classes, mean, std, split)


# -- CIFAR-10 -----------------------------------------------------------------

def read_cifar_batch(path):
    """Return ``(labels, images)`` from one CIFAR-10 binary batch file."""
    buf = _read_bytes(path)
    whole, rest = divmod(len(buf), CIFAR_RECORD)
    if rest:
        raise FormatError(f"truncated record: file is not a multiple of {CIFAR_RECORD} bytes",
                          path, whole * CIFAR_RECORD)
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    labels = rec[:, 0]
    bad = np.flatnonzero(labels >= 10)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} >= 10", path, int(bad[0]) * CIFAR_RECORD)
    return labels.astype(np.int64), rec[:, 1:].reshape(whole, 3, 32, 32)


def ingest_cifar10(root=None, split="train", mean=None, std=None, dtype=None):
    root = root or default_data_dir()
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    labels, images = [], []
    for name in names:
        path = os.path.join(root, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"{name} not found under {root}")
        lb, im = read_cifar_batch(path)
        labels.append(lb)
        images.append(im)
    x, mean, std = normalize(np.concatenate(images), mean, std, dtype)
    return Dataset(x, np.concatenate(labels), 10, mean, std, split)


def load_dataset(name, root=None, dtype=None):
    """Return ``(train, test)``; the test split is normalized with training statistics."""
    loader = {"mnist": ingest_mnist, "cifar10": ingest_cifar10}[name]
    train = loader(root, "train", dtype=dtype)
    try:
        test = loader(root, "test", mean=train.mean, std=train.std, dtype=dtype)
    except FileNotFoundError:
        test = None
    return train, test


# -- augmentation ---------------------------------------------------------------

def pad_image(image, pad):
    return np.pad(image, ((0, 0), (pad, pad), (pad, pad)))


def crop(padded, top, left, height, width):
    return padded[:, top : top + height, left : left + width]


def mirror(image):
    return image[:, :, ::-1]


def augment(image, rng, pad=4, random_crop=True, flip=True):
    """Zero-pad by ``pad``, crop back to size at a random offset, mirror with p=0.5.

    RNG draws per image, in order: crop row, crop column, flip coin.
    """
    c, h, w = image.shape
    out = image
    if random_crop and pad:
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        out = crop(pad_image(image, pad), top, left, h, w)
    if flip and rng.random() < 0.5:
        out = mirror(out)
    return np.ascontiguousarray(out)


def augment_batch(images, rng, pad=4, random_crop=True, flip=True):
    return np.stack([augment(im, rng, pad, random_crop, flip) for im in images])


# -- PGM / PPM ----------------------------------------------------------------

def _netpbm_tokens(buf, count, path):
    tokens, off = [], 2
    while len(tokens) < count:
        while off < len(buf) and chr(buf[off]).isspace():
            off += 1
        if off < len(buf) and buf[off : off + 1] == b"#":
            while off < len(buf) and buf[off : off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(buf) and not chr(buf[off]).isspace():
            off += 1
        if start == off:
            raise FormatError("truncated PNM header", path, off)
        tokens.append(int(buf[start:off]))
    return tokens, off


def read_pnm(path):
    """Read a binary or ASCII PGM/PPM file as a ``(C, H, W)`` uint8 array."""
    with open(path, "rb") as f:
        buf = f.read()
    kind = buf[:2]
    if kind not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError("not a PGM/PPM file", path, 0)
    (w, h, maxval), off = _netpbm_tokens(buf, 3, path)
    if maxval > 255:
        raise FormatError("only 8-bit PNM images are supported", path, off)
    channels = 3 if kind in (b"P3", b"P6") else 1
    count = w * h * channels
    if kind in (b"P5", b"P6"):
        off += 1
        if len(buf) - off < count:
            raise FormatError("truncated PNM pixel data", path, len(buf))
        data = np.frombuffer(buf, dtype=np.uint8, count=count, offset=off)
    else:
        vals = buf[off:].split()
        if len(vals) < count:
            raise FormatError("truncated PNM pixel data", path, len(buf))
        data = np.array([int(v) for v in vals[:count]], dtype=np.int64)
    data = data.astype(np.float64) * (255.0 / maxval)
    return np.rint(data).astype(np.uint8).reshape(h, w, channels).transpose(2, 0, 1).copy()


def write_pnm(path, image):
    """Write a ``(H, W)`` or ``(C, H, W)`` array; floats are min-max scaled to 0..255."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.dtype != np.uint8:
        lo, hi = float(arr.min()), float(arr.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        arr = np.rint((arr - lo) * scale).astype(np.uint8)
    c, h, w = arr.shape
    if c not in (1, 3):
        raise ValueError(f"PNM images need 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(arr.transpose(1, 2, 0).tobytes())
