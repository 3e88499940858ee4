"""Binary checkpoint container.

Layout (all integers little-endian)::

    u8   format version (currently 1)
    4s   magic b"RREC"
    u32  number of sections
    per section:
        u16 name length, name (utf-8)
        u64 Adam step counter
        u32 number of parameters
        per parameter:
            u16 name length, name (utf-8)
            u8  ndim, then ndim x u32 extents
            f64[] values, f64[] first moment, f64[] second moment (row-major)
    u32  metadata length, metadata (utf-8 JSON)
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from rre.errors import CheckpointError
from rre.numerics.optim import ParamStore

FORMAT_VERSION = 1
MAGIC = b"RREC"


def _write_str(buf, s: str, fmt: str = "<H") -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack(fmt, len(raw)))
    buf.write(raw)


def _read(buf, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _read_str(buf, fmt: str = "<H") -> str:
    (n,) = _read(buf, fmt)
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode("utf-8")


def _read_array(buf, shape) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = buf.read(8 * count)
    if len(raw) != 8 * count:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def dumps(sections: dict[str, ParamStore], metadata: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<B", FORMAT_VERSION))
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(sections)))
    for sec_name, store in sections.items():
        _write_str(buf, sec_name)
        buf.write(struct.pack("<QI", store.step, len(store.params)))
        for name, arr in store.params.items():
            _write_str(buf, name)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            for a in (arr, store.m[name], store.v[name]):
                buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    _write_str(buf, json.dumps(metadata or {}, sort_keys=True), "<I")
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, ParamStore], dict]:
    buf = io.BytesIO(data)
    (version,) = _read(buf, "<B")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if buf.read(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (n_sections,) = _read(buf, "<I")
    sections = {}
    for _ in range(n_sections):
        sec_name = _read_str(buf)
        step, n_params = _read(buf, "<QI")
        store = ParamStore()
        for _ in range(n_params):
            name = _read_str(buf)
            (ndim,) = _read(buf, "<B")
            shape = _read(buf, f"<{ndim}I") if ndim else ()
            store.add(name, _read_array(buf, shape))
            store.m[name] = _read_array(buf, shape)
            store.v[name] = _read_array(buf, shape)
        store.step = step
        sections[sec_name] = store
    try:
        metadata = json.loads(_read_str(buf, "<I"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    return sections, metadata


def save(path, sections: dict[str, ParamStore], metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(sections, metadata))


def load(path) -> tuple[dict[str, ParamStore], dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    return loads(data)
