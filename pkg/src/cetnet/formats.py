"""Binary containers for frame features (CETF) and model checkpoints (CETM).

Both are little-endian.

CETF::

    b"CETF"  u32 version=1  u64 T  u64 D  f32[T*D] row-major

CETM::

    b"CETM"  u32 version=1  u32 n  <n bytes of UTF-8 JSON config>
    u32 count, then per tensor:
        u32 name_len  <name bytes>  u32 rank  u64[rank] dims  f64[prod(dims)]
"""
import json
import struct

import numpy as np

from .errors import FormatError

FEATURE_MAGIC = b"CETF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"CETM"
CHECKPOINT_VERSION = 1


def write_feature_file(path, features):
    x = np.asarray(features)
    if x.ndim != 2 or 0 in x.shape:
        raise FormatError(f"features must be a non-empty T x D matrix, got shape {x.shape}", path)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FEATURE_VERSION, *x.shape))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def load_feature_file(path):
    """Read a CETF file into a float64 T x D array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_feature_bytes(buf, path)


def parse_feature_bytes(buf, path=None):
    header = 4 + 4 + 8 + 8
    if len(buf) < 4 or buf[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {FEATURE_MAGIC!r}", path, 0)
    if len(buf) < header:
        raise FormatError(f"truncated header: {len(buf)} of {header} bytes", path, len(buf))
    version, T, D = struct.unpack_from("<IQQ", buf, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    if T == 0:
        raise FormatError("T must be positive", path, 8)
    if D == 0:
        raise FormatError("D must be positive", path, 16)
    expected = header + 4 * T * D
    if len(buf) != expected:
        what = "truncated payload" if len(buf) < expected else "trailing bytes after payload"
        raise FormatError(f"{what}: file has {len(buf)} bytes, expected {expected}",
                          path, min(len(buf), expected))
    data = np.frombuffer(buf, dtype="<f4", count=T * D, offset=header)
    return data.reshape(T, D).astype(np.float64)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.path, self.pos = buf, path, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.pos} left", self.path, self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def write_checkpoint(path, config, tensors):
    """Write a JSON-serialisable ``config`` and an ordered name -> array mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path):
    """Return (config dict, ordered name -> float64 array)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", path, 0)
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    (n,) = r.unpack("<I", "config length")
    at = r.pos
    try:
        config = json.loads(r.take(n, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"config block is not valid JSON ({exc})", path, at) from None
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        at = r.pos
        (name_len,) = r.unpack("<I", f"name length of tensor {i}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"tensor {i} name is not UTF-8", path, at + 4) from None
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", path, at)
        (rank,) = r.unpack("<I", f"rank of {name!r}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name!r}") if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(8 * size, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor", path, r.pos)
    return config, tensors
