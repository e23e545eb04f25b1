"""Binary cloud/flow/weight formats and the ASCII xyz reader.

All binary formats are little-endian with a 4-byte magic and a u32 version:

* SFPC clouds: magic ``SFPC``, version, N u32, N x 3 f32 positions, C u32,
  then N x C f32 features when C > 0.
* SFFL flows: magic ``SFFL``, version, N u32, N x 3 f32 vectors.
* PVWT weights: magic ``PVWT``, version, count u32, then per tensor a u16
  name length, UTF-8 name, rank u8, u32 dims, and f32 data.

Errors name the byte offset (binary) or line number (ASCII) of the defect.
"""

import struct

import numpy as np

from .errors import BadMagic, NonFiniteValue, TruncatedFile
from .flow import FlowField
from .geometry import PointCloud

MAGIC_CLOUD = b"SFPC"
MAGIC_FLOW = b"SFFL"
MAGIC_WEIGHTS = b"PVWT"
VERSION = 1


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.path = path
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.buf):
            raise TruncatedFile(
                f"{self.path}: {what} needs {n} bytes at offset {self.offset}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def f32(self, count, what):
        start = self.offset
        raw = self.take(4 * count, what)
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise NonFiniteValue(
                f"{self.path}: non-finite {what} at byte offset {start + 4 * int(bad[0])}"
            )
        return arr

    def magic(self, expected):
        got = bytes(self.take(4, "magic"))
        if got != expected:
            raise BadMagic(
                f"{self.path}: expected magic {expected.decode()} at offset 0, got {got!r}"
            )
        version = self.u32("version")
        if version != VERSION:
            raise BadMagic(f"{self.path}: unsupported version {version} at offset 4")


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_cloud(path):
    """Read a point cloud from an SFPC binary or an ASCII .xyz file.

    Args:
        path: File path; names ending in ``.xyz`` parse as ASCII.

    Returns:
        PointCloud with optional feature channels attached.
    """
    path = str(path)
    if path.endswith(".xyz"):
        return _read_xyz(path)
    r = _Reader(_read_bytes(path), path)
    r.magic(MAGIC_CLOUD)
    n = r.u32("point count")
    pos = r.f32(3 * n, "positions").reshape(n, 3)
    c = r.u32("feature width")
    feats = r.f32(c * n, "features").reshape(n, c) if c > 0 else None
    return PointCloud(pos, features=feats)


def write_cloud(path, cloud, features=None):
    """Write a PointCloud (plus optional N x C features) as SFPC."""
    pos = np.ascontiguousarray(cloud.positions, dtype="<f4")
    feats = cloud.features if features is None else features
    blobs = [MAGIC_CLOUD, struct.pack("<II", VERSION, pos.shape[0]), pos.tobytes()]
    if feats is None:
        blobs.append(struct.pack("<I", 0))
    else:
        f = np.ascontiguousarray(feats, dtype="<f4")
        if not np.all(np.isfinite(f)):
            raise NonFiniteValue(f"{path}: refusing to write non-finite features")
        blobs.append(struct.pack("<I", f.shape[1]))
        blobs.append(f.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blobs))


def _read_xyz(path):
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 3:
                raise TruncatedFile(f"{path}: line {lineno}: expected 3 numbers, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise TruncatedFile(f"{path}: line {lineno}: unparseable coordinates") from None
            if not all(np.isfinite(v) for v in vals):
                raise NonFiniteValue(f"{path}: line {lineno}: non-finite coordinate")
            rows.append(vals)
    if not rows:
        raise TruncatedFile(f"{path}: line 1: no points")
    return PointCloud(np.asarray(rows, dtype=np.float64))


def read_flow(path):
    """Read an SFFL flow file; the stage of file-borne flow is 'refined'."""
    path = str(path)
    r = _Reader(_read_bytes(path), path)
    r.magic(MAGIC_FLOW)
    n = r.u32("vector count")
    vec = r.f32(3 * n, "flow vectors").reshape(n, 3)
    return FlowField(vec, stage="refined")


def write_flow(path, flow):
    """Write a FlowField (or N x 3 array) as SFFL."""
    vec = flow.vectors if hasattr(flow, "vectors") else np.asarray(flow)
    vec = np.ascontiguousarray(vec, dtype="<f4")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteValue(f"{path}: refusing to write non-finite flow")
    with open(path, "wb") as fh:
        fh.write(MAGIC_FLOW + struct.pack("<II", VERSION, vec.shape[0]) + vec.tobytes())


def read_weights(path):
    """Read a PVWT weights file into an ordered name -> float32 array dict."""
    path = str(path)
    r = _Reader(_read_bytes(path), path)
    r.magic(MAGIC_WEIGHTS)
    count = r.u32("tensor count")
    out = {}
    for _ in range(count):
        name_len = r.u16("name length")
        name = bytes(r.take(name_len, "tensor name")).decode("utf-8")
        rank = r.u8("rank")
        dims = tuple(r.u32("dim") for _ in range(rank))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = r.f32(size, f"tensor {name}")
        out[name] = data.reshape(dims).astype(np.float32)
    return out


def write_weights(path, weights):
    """Write a name -> array dict as PVWT (f32 data, insertion order kept)."""
    blobs = [MAGIC_WEIGHTS, struct.pack("<II", VERSION, len(weights))]
    for name, arr in weights.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(a)):
            raise NonFiniteValue(f"{path}: refusing to write non-finite tensor {name}")
        encoded = name.encode("utf-8")
        blobs.append(struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", a.ndim))
        blobs.append(struct.pack(f"<{a.ndim}I", *a.shape))
        blobs.append(a.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blobs))
