"""Dense tensors as numpy arrays, global dtype control, and tensor dump files.

Tensors are plain ``numpy.ndarray`` values in ``(batch, channels, height,
width)`` order. The binary dump format is::

    b"GTSR" | u32 rank | u32 dims[rank] | raw little-endian scalars

The scalar width (4 or 8 bytes) is implied by the payload size.
"""
import struct

import numpy as np

from .errors import FormatError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)

MAGIC = b"GTSR"


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


def resolve_dtype(dtype=None):
    return _DEFAULT_DTYPE if dtype is None else np.dtype(dtype)


def as_tensor(x, dtype=None):
    """Return ``x`` as a C-contiguous 4-D array with every dimension >= 1."""
    arr = np.ascontiguousarray(x, dtype=resolve_dtype(dtype))
    check_tensor(arr)
    return arr


def check_tensor(arr, channels=None, name="input"):
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, channels, height, width), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {arr.shape}")
    if channels is not None and arr.shape[1] != channels:
        raise ShapeError(f"{name} has {arr.shape[1]} channels, expected {channels}")


def dumps(arr):
    arr = np.asarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(_DEFAULT_DTYPE)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def loads(buf, path=None):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("bad tensor magic", path, 0)
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated tensor header", path, len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - off
    if count == 0:
        if payload:
            raise FormatError("trailing bytes after empty tensor", path, off)
        return np.zeros(dims, dtype=_DEFAULT_DTYPE)
    if payload == 4 * count:
        dtype = np.dtype("<f4")
    elif payload == 8 * count:
        dtype = np.dtype("<f8")
    else:
        raise FormatError(f"payload of {payload} bytes does not hold {count} scalars", path, off)
    return np.frombuffer(buf, dtype=dtype, offset=off).astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def save(path, arr):
    with open(path, "wb") as f:
        f.write(dumps(arr))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read(), path)


def dumps_text(arr):
    """Human-readable variant: a ``shape`` header line, then one row per line."""
    arr = np.asarray(arr)
    lines = ["shape " + " ".join(str(d) for d in arr.shape)]
    flat = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_text(text, dtype=None, path=None):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("shape"):
        raise FormatError("missing 'shape' header", path, 0)
    dims = tuple(int(t) for t in lines[0].split()[1:])
    values = [float(t) for ln in lines[1:] for t in ln.split()]
    if len(values) != int(np.prod(dims, dtype=np.int64)):
        raise FormatError(f"expected {int(np.prod(dims))} values, found {len(values)}", path)
    return np.array(values, dtype=resolve_dtype(dtype)).reshape(dims)
