"""Minimal raster container and report writing.

A raster file is a one-line UTF-8 JSON header (sorted keys) followed by a
blank line, then the raw little-endian payload in row-major order with
channels interleaved per pixel::

    {"byte_order": "little", "channels": 2, "dtype": "f32", ...}\\n\\n<payload>

Header keys: ``magic`` ("BIOREG1"), ``kind`` (image | field | mask),
``width``, ``height``, ``channels``, ``spacing_x_mm``, ``spacing_y_mm``,
``dtype`` (f32 | u8), ``byte_order`` ("little"). Mask files also carry
``labels``, one per channel.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DisplacementField2D, ScalarImage2D, SegMaskSet
from .errors import ParseError

MAGIC = "BIOREG1"
DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
KINDS = ("image", "field", "mask")
SEPARATOR = b"\n\n"


@dataclass(frozen=True)
class Raster:
    kind: str
    data: np.ndarray  # (height, width, channels) in the on-disk dtype
    spacing: tuple[float, float]
    labels: Optional[tuple[str, ...]] = None

    @property
    def dtype_name(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"


def serialize(r: Raster) -> bytes:
    if r.kind not in KINDS:
        raise ValueError(f"unknown raster kind {r.kind!r}")
    h, w, c = r.data.shape
    header = {
        "magic": MAGIC,
        "kind": r.kind,
        "width": w,
        "height": h,
        "channels": c,
        "spacing_x_mm": float(r.spacing[0]),
        "spacing_y_mm": float(r.spacing[1]),
        "dtype": r.dtype_name,
        "byte_order": "little",
    }
    if r.labels is not None:
        header["labels"] = list(r.labels)
    payload = np.ascontiguousarray(r.data, dtype=DTYPES[r.dtype_name]).tobytes()
    return json.dumps(header, sort_keys=True).encode("utf-8") + SEPARATOR + payload


def parse(blob: bytes) -> Raster:
    head, sep, payload = blob.partition(SEPARATOR)
    if not sep:
        raise ParseError("missing header terminator")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise ParseError("bad magic")
    try:
        kind = header["kind"]
        w, h, c = int(header["width"]), int(header["height"]), int(header["channels"])
        spacing = (float(header["spacing_x_mm"]), float(header["spacing_y_mm"]))
        dtype = DTYPES[header["dtype"]]
        order = header["byte_order"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header field: {exc}") from None
    if kind not in KINDS or order != "little" or min(w, h, c) < 1:
        raise ParseError(f"unsupported header {header}")
    if len(payload) != w * h * c * dtype.itemsize:
        raise ParseError(f"payload is {len(payload)} bytes, expected {w * h * c * dtype.itemsize}")
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w, c).copy()
    labels = header.get("labels")
    if labels is not None:
        labels = tuple(str(lab) for lab in labels)
        if len(labels) != c:
            raise ParseError("label count does not match channel count")
    return Raster(kind, data, spacing, labels)


def atomic_write(path, blob: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_raster(path) -> Raster:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse(blob)


def write_raster(path, r: Raster):
    atomic_write(path, serialize(r))


# conversions to and from the in-memory types


def image_to_raster(img: ScalarImage2D) -> Raster:
    return Raster("image", img.data.astype("<f4")[..., None], img.spacing)


def field_to_raster(u: DisplacementField2D) -> Raster:
    return Raster("field", np.stack([u.u1, u.u2], axis=-1).astype("<f4"), u.spacing)


def masks_to_raster(masks: SegMaskSet) -> Raster:
    data = np.stack([m for _, m in masks.structures], axis=-1).astype(np.uint8)
    return Raster("mask", data, masks.spacing, tuple(masks.labels))


def _expect(r: Raster, kind: str, channels: Optional[int] = None):
    if r.kind != kind:
        raise ParseError(f"expected a {kind} raster, got {r.kind}")
    if channels is not None and r.data.shape[2] != channels:
        raise ParseError(f"expected {channels} channel(s), got {r.data.shape[2]}")


def load_image(path) -> ScalarImage2D:
    r = read_raster(path)
    _expect(r, "image", 1)
    return ScalarImage2D(r.data[..., 0].astype(np.float64), r.spacing)


def load_field(path) -> DisplacementField2D:
    r = read_raster(path)
    _expect(r, "field", 2)
    d = r.data.astype(np.float64)
    return DisplacementField2D(d[..., 0], d[..., 1], r.spacing)


def load_masks(path) -> SegMaskSet:
    r = read_raster(path)
    _expect(r, "mask")
    labels = r.labels or tuple(f"structure{k}" for k in range(r.data.shape[2]))
    return SegMaskSet(tuple((lab, r.data[..., k]) for k, lab in enumerate(labels)), r.spacing)


def dump_report(path, obj):
    """Write a report as deterministic JSON (sorted keys, fixed indentation)."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    atomic_write(path, text.encode("utf-8"))
