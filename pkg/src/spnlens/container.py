"""Binary container shared by residue (.res), reference (.ref) and dark (.dark) files.

Layout, all little-endian::

    magic      4s   b"SPNC"
    version    u16
    kind       4s   b"RES ", b"REF " or b"DARK"
    n_planes   u16
    height     u32
    width      u32
    cfg_hash   16s  ASCII hex, zero padded
    prov_len   u32
    provenance prov_len bytes of UTF-8 JSON
    then per plane: label 4s, height*width float64 values (row-major)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DecodeError, ValidationError

MAGIC = b"SPNC"
VERSION = 1
KINDS = {"residue": b"RES ", "reference": b"REF ", "dark": b"DARK"}
_HEADER = struct.Struct("<4sH4sHII16sI")


def write_container(path, kind: str, planes: dict, config_hash: str = "", provenance: dict | None = None) -> Path:
    if kind not in KINDS:
        raise ValueError(f"unknown container kind {kind!r}")
    arrays = [(str(k), np.asarray(v, dtype="<f8")) for k, v in planes.items()]
    if not arrays:
        raise ValidationError("container needs at least one plane")
    shape = arrays[0][1].shape
    if any(a.shape != shape or a.ndim != 2 for _, a in arrays):
        raise ValidationError("all container planes must be 2-D and equally sized")
    prov = json.dumps(provenance or {}, sort_keys=True).encode()
    h, w = shape
    parts = [_HEADER.pack(MAGIC, VERSION, KINDS[kind], len(arrays), h, w,
                          config_hash.encode("ascii")[:16].ljust(16, b"\0"), len(prov)), prov]
    for label, a in arrays:
        lab = label.encode("ascii")
        if len(lab) > 4:
            raise ValidationError(f"plane label {label!r} longer than 4 bytes")
        parts.append(lab.ljust(4, b"\0"))
        parts.append(np.ascontiguousarray(a).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)
    return path


def read_container(path, expect: str | None = None):
    """Return ``(kind, planes, config_hash, provenance)``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    if len(buf) < _HEADER.size:
        raise DecodeError(f"{path}: truncated header")
    magic, version, kind_tag, n, h, w, cfg, plen = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC or version != VERSION:
        raise DecodeError(f"{path}: not a container file (magic {magic!r}, version {version})")
    kinds = {v: k for k, v in KINDS.items()}
    if kind_tag not in kinds:
        raise DecodeError(f"{path}: unknown kind {kind_tag!r}")
    kind = kinds[kind_tag]
    if expect is not None and kind != expect:
        raise DecodeError(f"{path}: expected a {expect} file, found {kind}")
    off = _HEADER.size
    try:
        provenance = json.loads(buf[off : off + plen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{path}: bad provenance block: {exc}") from exc
    off += plen
    nbytes = h * w * 8
    if len(buf) != off + n * (4 + nbytes):
        raise DecodeError(f"{path}: size {len(buf)} does not match {n} planes of {w}x{h}")
    planes = {}
    for _ in range(n):
        label = buf[off : off + 4].rstrip(b"\0").decode("ascii")
        off += 4
        planes[label] = np.frombuffer(buf, dtype="<f8", count=h * w, offset=off).reshape(h, w).astype(np.float64)
        off += nbytes
    return kind, planes, cfg.rstrip(b"\0").decode("ascii"), provenance
