"""Named-tensor weight files (MCWT): the transfer-learning vehicle.

Little-endian layout: magic ``MCWT``, format version u32, tensor count
u32; per tensor: name length u16, UTF-8 name, rank u8, extents u32 each,
dtype u8 (0 = float32), row-major float32 payload. The file ends with the
CRC32 of all preceding bytes, so any corruption is detected before a
single value reaches a model.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, LoadError

MAGIC = b"MCWT"
FORMAT_VERSION = 1
DTYPE_F32 = 0


@dataclass
class LoadReport:
    """What a non-strict load did: names assigned, skipped, or left over."""
    loaded: list = field(default_factory=list)
    missing: list = field(default_factory=list)      # in model, not in file
    mismatched: list = field(default_factory=list)   # present but wrong dims
    unused: list = field(default_factory=list)       # in file, not in model

    @property
    def skipped(self):
        return sorted(self.missing + self.mismatched)


def _named_tensors(model):
    """Parameters then buffers, in traversal order (load is by name)."""
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield name, b


def save_weights(model, path, provenance=""):
    """Write every parameter and buffer as float32; round-trip is bit-exact."""
    del provenance  # reserved header extension; names are self-describing
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    entries = list(_named_tensors(model))
    chunks.append(struct.pack("<I", len(entries)))
    seen = set()
    for name, arr in entries:
        if name in seen:
            raise FormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<B", DTYPE_F32))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def read_weight_file(path):
    """Parse an MCWT file into an ordered name -> float32 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated weight file ({len(blob)} bytes)")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise FormatError(f"{path}: CRC mismatch, file corrupt")
    if body[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {body[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    tensors = {}
    off = 12
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            (dtype,) = struct.unpack_from("<B", body, off)
            off += 1
            if dtype != DTYPE_F32:
                raise FormatError(f"{path}: unknown dtype tag {dtype} for {name!r}")
            n = int(np.prod(shape)) if rank else 1
            payload = body[off:off + 4 * n]
            if len(payload) != 4 * n:
                raise FormatError(f"{path}: truncated payload for {name!r}")
            off += 4 * n
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    except struct.error as exc:
        raise FormatError(f"{path}: truncated weight file ({exc})") from exc
    if off != len(body):
        raise FormatError(f"{path}: {len(body) - off} trailing bytes after last tensor")
    return tensors


def load_weights(model, path, strict=True):
    """Assign file tensors to model parameters and buffers by name.

    Strict mode requires every model tensor to be present with matching
    dims and raises LoadError listing offenders (model untouched).
    Non-strict skips and reports them, which is how a 1000-class
    checkpoint feeds a 2-class model.
    """
    tensors = read_weight_file(path)
    report = LoadReport()
    targets = list(_named_tensors(model))
    plan = []
    for name, arr in targets:
        if name not in tensors:
            report.missing.append(name)
        elif tensors[name].shape != arr.shape:
            report.mismatched.append(name)
        else:
            plan.append((name, arr, tensors[name]))
    model_names = {name for name, _ in targets}
    report.unused = sorted(set(tensors) - model_names)
    if strict and (report.missing or report.mismatched):
        raise LoadError(
            "strict load failed; missing: " + ", ".join(sorted(report.missing))
            + "; dims mismatch: " + ", ".join(sorted(report.mismatched)))
    for name, dst, src in plan:
        dst[...] = src.astype(dst.dtype, copy=False)
        report.loaded.append(name)
    return report
