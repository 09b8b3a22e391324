"""Binary tensor container and model checkpoints.

Layout (all integers little-endian)::

    b"WMLB"  u16 version=1
    repeated until EOF:
        u16 name_len, name (UTF-8), u8 rank, u32 dim * rank, f32 data * prod(dims)

A JSON sidecar ``<path>.json`` carries the :class:`ModelSpec` and free-form metadata.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from ..errors import FormatError
from ..utils import load_json_payload, save_json_payload
from .model import Model
from .spec import ModelSpec

log = logging.getLogger(__name__)

MAGIC = b"WMLB"
VERSION = 1
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")


def sidecar_path(path: str | Path) -> Path:
    """Return the JSON sidecar path for a container file."""
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_tensors(path: str | Path, tensors: Mapping[str, NDArray[Any]]) -> Path:
    """Write named tensors as little-endian float32 in mapping order."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, _U16.pack(VERSION)]
    for name, value in tensors.items():
        arr = np.asarray(value)
        raw = name.encode("utf-8")
        chunks.append(_U16.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U8.pack(arr.ndim))
        chunks.extend(_U32.pack(d) for d in arr.shape)
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    p.write_bytes(b"".join(chunks))
    return p


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    @property
    def at_end(self) -> bool:
        return self.pos >= len(self.buf)

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(field, f"truncated: need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def read_tensors(path: str | Path) -> dict[str, NDArray[np.float32]]:
    """Read a container written by :func:`write_tensors`.

    Raises:
        FormatError: Naming the offending field on bad magic, version or truncation.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}")
    (version,) = _U16.unpack(r.take(_U16.size, "version"))
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}, expected {VERSION}")
    out: dict[str, NDArray[np.float32]] = {}
    while not r.at_end:
        (name_len,) = _U16.unpack(r.take(_U16.size, "name"))
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("name", f"invalid UTF-8: {exc}") from None
        if name in out:
            raise FormatError("name", f"duplicate tensor {name!r}")
        (rank,) = _U8.unpack(r.take(_U8.size, "rank"))
        dims = tuple(_U32.unpack(r.take(_U32.size, "dims"))[0] for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * count, "data"), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(dims)
    return out


def save_checkpoint(model: Model, path: str | Path, metadata: Mapping[str, Any] | None = None) -> Path:
    """Persist ``model`` parameters plus a sidecar with its spec and ``metadata``."""
    p = write_tensors(path, model.params)
    save_json_payload(
        {
            "format": MAGIC.decode("ascii"),
            "version": VERSION,
            "spec": model.spec.model_dump(mode="json"),
            "metadata": dict(metadata or {}),
        },
        sidecar_path(p),
    )
    log.debug("checkpoint written: %s (%d params)", p, model.num_params)
    return p


def load_checkpoint(path: str | Path, spec: ModelSpec | None = None) -> Model:
    """Load a checkpoint; the spec comes from ``spec`` or the sidecar.

    Raises:
        FormatError: On container corruption, a missing or invalid sidecar spec,
            or parameters that disagree with the spec.
    """
    tensors = read_tensors(path)
    if spec is None:
        side = sidecar_path(path)
        if not side.exists():
            raise FormatError("spec", f"no spec given and sidecar {side} is missing")
        try:
            spec = ModelSpec.model_validate(load_json_payload(side)["spec"])
        except (KeyError, ValidationError, ValueError) as exc:
            raise FormatError("spec", f"invalid sidecar: {exc}") from None
    expected = spec.param_shapes
    if list(tensors) != list(expected):
        raise FormatError("name", f"parameters {list(tensors)} do not match spec order {list(expected)}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise FormatError("dims", f"{name}: {tensors[name].shape} != {shape}")
    return Model(spec, tensors)  # type: ignore[arg-type]


def load_metadata(path: str | Path) -> dict[str, Any]:
    """Return the ``metadata`` block of a checkpoint sidecar (empty if absent)."""
    side = sidecar_path(path)
    if not side.exists():
        return {}
    payload = load_json_payload(side)
    return dict(payload.get("metadata") or {})
