"""Binary artifact formats.

EVPT tensor file: magic "EVPT", version byte 0x01, dtype byte (0=f32, 1=f64),
rank byte, rank u32 little-endian dims, then the row-major little-endian
payload.

EVPC checkpoint archive: magic "EVPC", version byte 0x01, record count u32
little-endian, then per record a u16 little-endian name length, UTF-8 name,
and an embedded EVPT blob.  Record names are dotted parameter paths.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

EVPT_MAGIC = b"EVPT"
EVPC_MAGIC = b"EVPC"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    # ascontiguousarray alone would promote rank 0 to rank 1
    arr = np.asarray(arr)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"EVPT: unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("EVPT: rank exceeds 255")
    head = EVPT_MAGIC + bytes([_VERSION, code, arr.ndim])
    dims = b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + dims + arr.astype(_DTYPES[code], copy=False).tobytes()


def tensor_from_bytes(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one EVPT blob starting at ``offset``; returns (array, next offset)."""
    if blob[offset:offset + 4] != EVPT_MAGIC:
        raise FormatError("EVPT: bad magic")
    if len(blob) < offset + 7:
        raise FormatError("EVPT: truncated header")
    version, code, rank = blob[offset + 4], blob[offset + 5], blob[offset + 6]
    if version != _VERSION:
        raise FormatError(f"EVPT: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"EVPT: unknown dtype code {code}")
    pos = offset + 7
    if len(blob) < pos + 4 * rank:
        raise FormatError("EVPT: truncated dims")
    shape = tuple(struct.unpack_from("<I", blob, pos + 4 * i)[0] for i in range(rank))
    pos += 4 * rank
    dtype = _DTYPES[code]
    count = 1
    for d in shape:
        count *= d
    nbytes = count * dtype.itemsize
    if len(blob) < pos + nbytes:
        raise FormatError("EVPT: truncated payload")
    arr = np.frombuffer(blob[pos:pos + nbytes], dtype=dtype).reshape(shape)
    # Native-endian copy so downstream code can mutate freely.
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def write_evpt(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_evpt(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    arr, end = tensor_from_bytes(blob)
    if end != len(blob):
        raise FormatError(f"EVPT: {len(blob) - end} trailing bytes")
    return arr


def checkpoint_to_bytes(named: dict[str, np.ndarray]) -> bytes:
    parts = [EVPC_MAGIC, bytes([_VERSION]), struct.pack("<I", len(named))]
    for name, arr in named.items():
        enc = name.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise FormatError(f"EVPC: name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
        parts.append(tensor_to_bytes(arr))
    return b"".join(parts)


def checkpoint_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != EVPC_MAGIC:
        raise FormatError("EVPC: bad magic")
    if len(blob) < 9:
        raise FormatError("EVPC: truncated header")
    if blob[4] != _VERSION:
        raise FormatError(f"EVPC: unsupported version {blob[4]}")
    (count,) = struct.unpack_from("<I", blob, 5)
    pos = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(blob) < pos + 2:
            raise FormatError("EVPC: truncated record")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        if name in out:
            raise FormatError(f"EVPC: duplicate record {name}")
        out[name], pos = tensor_from_bytes(blob, pos)
    if pos != len(blob):
        raise FormatError(f"EVPC: {len(blob) - pos} trailing bytes")
    return out


def write_checkpoint(path: str | Path, named: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(named))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return checkpoint_from_bytes(Path(path).read_bytes())


def state_checksum(named: dict[str, np.ndarray]) -> str:
    """SHA-256 over records in sorted-name order (name, dtype, dims, payload)."""
    h = hashlib.sha256()
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name])
        h.update(name.encode("utf-8"))
        h.update(bytes([_DTYPE_CODES.get(arr.dtype, 255)]))
        for d in arr.shape:
            h.update(struct.pack("<I", d))
        h.update(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# PNM import (binary P5 grayscale / P6 RGB, maxval 255)


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM/PPM file into a float32 array in [0, 1].

    P5 yields H x W; P6 yields 3 x H x W (channel-first).
    """
    blob = Path(path).read_bytes()
    if blob[:2] not in (b"P5", b"P6"):
        raise FormatError(f"PNM: unsupported format {blob[:2]!r}")
    rgb = blob[:2] == b"P6"

    # Header tokens: width, height, maxval; '#' comments run to end of line.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise FormatError("PNM: truncated header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            end = pos
            while end < len(blob) and blob[end:end + 1].isdigit():
                end += 1
            tokens.append(int(blob[pos:end]))
            pos = end
        else:
            raise FormatError(f"PNM: unexpected header byte {ch!r}")
    width, height, maxval = tokens
    if maxval != 255:
        raise FormatError(f"PNM: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 3 if rgb else 1
    need = width * height * channels
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"PNM: expected {need} pixel bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / 255.0
    if rgb:
        return arr.reshape(height, width, 3).transpose(2, 0, 1).copy()
    return arr.reshape(height, width)
