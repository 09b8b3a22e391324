"""IDX (MNIST-style) image/label file reader and writer."""

from __future__ import annotations

import gzip
import logging
import struct
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..errors import FormatError
from .dataset import LabeledDataset

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse(buf: bytes, expected_magic: int, ndim: int, what: str) -> NDArray[np.uint8]:
    if len(buf) < 4:
        raise FormatError("magic", f"{what}: file too short for a header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise FormatError("magic", f"{what}: expected 0x{expected_magic:08x}, got 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError("dims", f"{what}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims))
    if len(buf) - header != count:
        raise FormatError("data", f"{what}: expected {count} data bytes for dims {dims}, got {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    *,
    num_classes: int | None = None,
    name: str | None = None,
) -> LabeledDataset:
    """Load an IDX image/label pair; ``.gz`` files are decompressed transparently.

    Pixel bytes are scaled to ``[0, 1]`` by ``/255``; images gain a trailing channel axis.

    Args:
        images_path: ``idx3-ubyte`` images file.
        labels_path: ``idx1-ubyte`` labels file.
        num_classes: Class count; defaults to ``max(label) + 1`` (at least 2).
        name: Dataset name, defaults to the images file stem.

    Raises:
        FormatError: On a bad magic number, truncated header/data or a count mismatch.
    """
    ipath, lpath = Path(images_path), Path(labels_path)
    images = _parse(_read_bytes(ipath), IMAGES_MAGIC, 3, "images")
    labels = _parse(_read_bytes(lpath), LABELS_MAGIC, 1, "labels")
    if labels.shape[0] != images.shape[0]:
        raise FormatError("count", f"{labels.shape[0]} labels for {images.shape[0]} images")
    k = num_classes if num_classes is not None else max(int(labels.max(initial=0)) + 1, 2)
    if labels.size and int(labels.max()) >= k:
        raise FormatError("labels", f"label {int(labels.max())} out of range for {k} classes")
    samples = (images.astype(np.float32) / np.float32(255.0))[..., None]
    log.debug("loaded %d images %s from %s", images.shape[0], images.shape[1:], ipath)
    return LabeledDataset.from_arrays(samples, labels, k, name=name or ipath.stem, provenance=f"file:{ipath.name}")


def write_idx(images_path: str | Path, labels_path: str | Path, images: NDArray[np.uint8], labels: NDArray[np.integer]) -> None:
    """Write ``(N, H, W)`` uint8 images and ``(N,)`` labels as an IDX pair."""
    imgs = np.ascontiguousarray(images, dtype=np.uint8)
    labs = np.ascontiguousarray(labels, dtype=np.uint8)
    for path, magic, arr in ((Path(images_path), IMAGES_MAGIC, imgs), (Path(labels_path), LABELS_MAGIC, labs)):
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()
        if path.suffix == ".gz":
            with gzip.open(path, "wb") as fh:
                fh.write(payload)
        else:
            path.write_bytes(payload)
