"""Raster data model and on-disk formats.

Rasters are plain numpy arrays:

* label map: (H, W) ``uint8``, class ids in ``[0, C)`` or :data:`IGNORE_ID`;
* probability map: (H, W, C) ``float32``, rows summing to 1;
* feature map: (H, W, d) ``float32``, finite.

Files
-----
SEGP  ``b"SEGP"``, then little-endian u32 version (1), H, W, C, then H*W*C
      little-endian f32 in (y, x, c) order.  Feature maps use it with C = d.
SEGL  ``b"SEGL"``, u32 version (1), H, W, then H*W bytes.
PGM   binary P5 with maxval 255 (label maps), written as ``P5 W H 255\\n``.
PPM   binary P6 with maxval 255 (RGB images for augmentation).
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from segcal.errors import (
    BadMagicError,
    DimensionError,
    DuplicateIdError,
    InconsistentManifestError,
    InvariantError,
    MalformedHeaderError,
    ManifestError,
    MissingFileError,
    NonFiniteError,
    NormalizationError,
    ShapeMismatchError,
    TrailingDataError,
    TruncatedError,
    UnsupportedFormatError,
    UnsupportedVersionError,
    ValueRangeError,
)

PathLike = Union[str, os.PathLike]

IGNORE_ID = 255
NORM_TOL = 1e-4
SEGP_MAGIC = b"SEGP"
SEGL_MAGIC = b"SEGL"
FORMAT_VERSION = 1
# 2**32 f32 entries is already 16 GiB; anything larger is a corrupt header
MAX_ELEMENTS = 2**32

_SEGP_HEADER = struct.Struct("<4sIIII")
_SEGL_HEADER = struct.Struct("<4sIII")


# ---------------------------------------------------------------------------
# validation


def check_probmap(probs: np.ndarray, tol: float = NORM_TOL) -> None:
    """Raise if ``probs`` is not a valid (H, W, C) probability map."""
    if probs.ndim != 3:
        raise DimensionError(f"probability map must be 3-d, got shape {probs.shape}")
    if min(probs.shape) == 0:
        raise DimensionError(f"empty probability map {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise NonFiniteError("probability map contains NaN or inf")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueRangeError("probability outside [0, 1]")
    sums = probs.sum(axis=-1, dtype=np.float64)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > tol:
        raise NormalizationError(f"pixel probabilities sum off by {worst:.3g} (> {tol})")


def check_labelmap(labels: np.ndarray, classes: Optional[int] = None) -> None:
    if labels.ndim != 2:
        raise DimensionError(f"label map must be 2-d, got shape {labels.shape}")
    if min(labels.shape) == 0:
        raise DimensionError(f"empty label map {labels.shape}")
    if labels.dtype != np.uint8:
        raise InvariantError(f"label map must be uint8, got {labels.dtype}")
    if classes is not None:
        if not 1 <= classes <= 255:
            raise ValueRangeError(f"class count {classes} outside [1, 255]")
        bad = (labels >= classes) & (labels != IGNORE_ID)
        if bad.any():
            raise ValueRangeError(
                f"label id {int(labels[bad][0])} outside [0, {classes}) and not ignore"
            )


def check_featuremap(features: np.ndarray) -> None:
    if features.ndim != 3 or min(features.shape) == 0:
        raise DimensionError(f"feature map must be non-empty 3-d, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise NonFiniteError("feature map contains NaN or inf")


# ---------------------------------------------------------------------------
# SEGP


def _segp_bytes(arr: np.ndarray) -> bytes:
    h, w, c = arr.shape
    header = _SEGP_HEADER.pack(SEGP_MAGIC, FORMAT_VERSION, h, w, c)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _check_dims(dims: tuple[int, ...]) -> None:
    if any(d == 0 for d in dims):
        raise DimensionError(f"zero dimension in header {dims}")
    n = 1
    for d in dims:
        n *= d
    if n > MAX_ELEMENTS:
        raise DimensionError(f"header dimensions {dims} overflow the element limit")


def read_segp_header(path: PathLike) -> tuple[int, int, int]:
    """(H, W, C) from a SEGP header without touching the payload."""
    with open(path, "rb") as f:
        head = f.read(_SEGP_HEADER.size)
    return _parse_segp_header(head)


def _parse_segp_header(head: bytes) -> tuple[int, int, int]:
    if len(head) < 4 or head[:4] != SEGP_MAGIC:
        raise BadMagicError(f"not a SEGP file (magic {head[:4]!r})")
    if len(head) < _SEGP_HEADER.size:
        raise TruncatedError("SEGP header is truncated")
    _, version, h, w, c = _SEGP_HEADER.unpack(head[: _SEGP_HEADER.size])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"SEGP version {version}")
    _check_dims((h, w, c))
    return h, w, c


def _decode_segp(buf: bytes, strict: bool) -> np.ndarray:
    h, w, c = _parse_segp_header(buf[: _SEGP_HEADER.size])
    need = 4 * h * w * c
    payload = len(buf) - _SEGP_HEADER.size
    if payload < need:
        raise TruncatedError(f"SEGP payload has {payload} bytes, header implies {need}")
    if payload > need and strict:
        raise TrailingDataError(f"{payload - need} bytes after SEGP payload")
    data = np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=_SEGP_HEADER.size)
    return data.astype(np.float32).reshape(h, w, c)


def read_probmap(
    path: PathLike, *, validate: bool = True, strict: bool = True, tol: float = NORM_TOL
) -> np.ndarray:
    """Read a SEGP probability map.

    ``validate=False`` skips the range and normalization checks (NaNs are
    still rejected); ``strict=False`` tolerates bytes after the payload.
    """
    arr = _decode_segp(Path(path).read_bytes(), strict)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{path}: NaN or inf entries")
    if validate:
        check_probmap(arr, tol)
    return arr


def write_probmap(probs: np.ndarray, path: PathLike, *, validate: bool = True) -> None:
    probs = np.asarray(probs)
    if probs.dtype != np.float32:
        raise InvariantError(f"probability maps are float32, got {probs.dtype}")
    if validate:
        check_probmap(probs)
    else:
        check_featuremap(probs)
    Path(path).write_bytes(_segp_bytes(probs))


def read_featuremap(path: PathLike, *, strict: bool = True) -> np.ndarray:
    arr = _decode_segp(Path(path).read_bytes(), strict)
    check_featuremap(arr)
    return arr


def write_featuremap(features: np.ndarray, path: PathLike) -> None:
    features = np.asarray(features, dtype=np.float32)
    check_featuremap(features)
    Path(path).write_bytes(_segp_bytes(features))


# ---------------------------------------------------------------------------
# label maps: PGM (P5) and SEGL

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _parse_pnm_header(buf: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset) of a binary PNM."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise MalformedHeaderError("PNM header ends early")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != magic:
        raise UnsupportedFormatError(f"expected {magic.decode()}, got {tokens[0][:2]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric PNM header field: {exc}") from None
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("missing whitespace after maxval")
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} (only 255 supported)")
    if width <= 0 or height <= 0:
        raise DimensionError(f"PNM size {width}x{height}")
    return width, height, maxval, pos + 1


def _payload(buf: bytes, offset: int, need: int, strict: bool) -> bytes:
    have = len(buf) - offset
    if have < need:
        raise TruncatedError(f"payload has {have} bytes, header implies {need}")
    if have > need and strict:
        raise TrailingDataError(f"{have - need} bytes after payload")
    return buf[offset : offset + need]


def decode_labelmap(buf: bytes, *, strict: bool = True) -> np.ndarray:
    if buf[:4] == SEGL_MAGIC:
        if len(buf) < _SEGL_HEADER.size:
            raise TruncatedError("SEGL header is truncated")
        _, version, h, w = _SEGL_HEADER.unpack(buf[: _SEGL_HEADER.size])
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"SEGL version {version}")
        _check_dims((h, w))
        data = _payload(buf, _SEGL_HEADER.size, h * w, strict)
    elif buf[:2] == b"P5":
        w, h, _, off = _parse_pnm_header(buf, b"P5")
        data = _payload(buf, off, h * w, strict)
    elif buf[:1] == b"P" and buf[1:2].isdigit():
        raise UnsupportedFormatError(f"netpbm variant {buf[:2].decode()} is not supported")
    else:
        raise BadMagicError(f"not a PGM or SEGL label map (magic {buf[:4]!r})")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_labelmap(
    path: PathLike, *, classes: Optional[int] = None, strict: bool = True
) -> np.ndarray:
    labels = decode_labelmap(Path(path).read_bytes(), strict=strict)
    if classes is not None:
        check_labelmap(labels, classes)
    return labels


def encode_labelmap(labels: np.ndarray, fmt: str = "pgm") -> bytes:
    labels = np.asarray(labels)
    check_labelmap(labels)
    h, w = labels.shape
    if fmt == "pgm":
        header = b"P5 %d %d 255\n" % (w, h)
    elif fmt == "segl":
        header = _SEGL_HEADER.pack(SEGL_MAGIC, FORMAT_VERSION, h, w)
    else:
        raise ValueError(f"unknown label format {fmt!r}")
    return header + np.ascontiguousarray(labels).tobytes()


def write_labelmap(labels: np.ndarray, path: PathLike, fmt: Optional[str] = None) -> None:
    """Write a label map; the format follows the suffix (``.segl`` or PGM)."""
    if fmt is None:
        fmt = "segl" if str(path).lower().endswith(".segl") else "pgm"
    Path(path).write_bytes(encode_labelmap(labels, fmt))


# ---------------------------------------------------------------------------
# PPM (P6) for RGB images


def read_ppm(path: PathLike, *, strict: bool = True) -> np.ndarray:
    """Read a binary P6 image as an (H, W, 3) float32 array in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        if buf[:1] == b"P" and buf[1:2].isdigit():
            raise UnsupportedFormatError(f"netpbm variant {buf[:2].decode()} is not supported")
        raise BadMagicError(f"not a PPM file (magic {buf[:2]!r})")
    w, h, _, off = _parse_pnm_header(buf, b"P6")
    data = _payload(buf, off, 3 * h * w, strict)
    return (np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3) / np.float32(255.0)).astype(
        np.float32
    )


def write_ppm(img: np.ndarray, path: PathLike) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or min(img.shape) == 0:
        raise DimensionError(f"RGB image must be (H, W, 3), got {img.shape}")
    h, w, _ = img.shape
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(b"P6 %d %d 255\n" % (w, h) + data.tobytes())


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    id: str
    label_path: Optional[Path]
    prob_paths: list[Path] = field(default_factory=list)
    feature_path: Optional[Path] = None


@dataclass
class Manifest:
    classes: int
    entries: list[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def check_entry(self, entry: ManifestEntry) -> None:
        """Header-level consistency of one entry: C and H x W agree."""
        size = None
        if entry.label_path is not None:
            lab = decode_labelmap(Path(entry.label_path).read_bytes(), strict=False)
            size = lab.shape
        for p in entry.prob_paths:
            h, w, c = read_segp_header(p)
            if c != self.classes:
                raise InconsistentManifestError(
                    f"entry {entry.id!r}: {p} has {c} classes, manifest says {self.classes}"
                )
            if size is None:
                size = (h, w)
            elif (h, w) != size:
                raise InconsistentManifestError(
                    f"entry {entry.id!r}: {p} is {h}x{w}, expected {size[0]}x{size[1]}"
                )
        if entry.feature_path is not None:
            h, w, _ = read_segp_header(entry.feature_path)
            if size is not None and (h, w) != size:
                raise InconsistentManifestError(
                    f"entry {entry.id!r}: features are {h}x{w}, expected {size[0]}x{size[1]}"
                )


def load_manifest(path: PathLike, *, strict: bool = False) -> Manifest:
    """Load and validate a JSON manifest.

    Relative paths resolve against the manifest's directory. File existence
    and id uniqueness are always checked; with ``strict`` every referenced
    raster header is read and checked for class-count and size agreement.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "classes" not in doc or "entries" not in doc:
        raise ManifestError(f"{path}: expected an object with 'classes' and 'entries'")
    classes = doc["classes"]
    if not isinstance(classes, int) or not 1 <= classes <= 255:
        raise ManifestError(f"{path}: 'classes' must be an integer in [1, 255]")
    root = path.parent

    def resolve(p: str) -> Path:
        full = root / p
        if not full.is_file():
            raise MissingFileError(f"referenced file not found: {full}")
        return full

    seen = set()
    entries = []
    for raw in doc["entries"]:
        try:
            eid = str(raw["id"])
        except (KeyError, TypeError):
            raise ManifestError(f"{path}: entry without 'id'") from None
        if eid in seen:
            raise DuplicateIdError(f"duplicate entry id {eid!r}")
        seen.add(eid)
        probs = raw.get("probs", [])
        if not isinstance(probs, list):
            raise ManifestError(f"entry {eid!r}: 'probs' must be a list")
        entries.append(
            ManifestEntry(
                eid,
                resolve(raw["label"]) if raw.get("label") else None,
                [resolve(p) for p in probs],
                resolve(raw["features"]) if raw.get("features") else None,
            )
        )
    manifest = Manifest(classes, entries)
    if strict:
        for e in entries:
            manifest.check_entry(e)
    return manifest


def write_manifest(manifest: Manifest, path: PathLike) -> None:
    """Serialize with paths relative to the manifest's directory."""
    root = Path(path).parent.resolve()

    def rel(p: Path) -> str:
        return os.path.relpath(Path(p).resolve(), root)

    entries = []
    for e in manifest.entries:
        raw: dict = {"id": e.id}
        if e.label_path is not None:
            raw["label"] = rel(e.label_path)
        raw["probs"] = [rel(p) for p in e.prob_paths]
        if e.feature_path is not None:
            raw["features"] = rel(e.feature_path)
        entries.append(raw)
    Path(path).write_text(
        json.dumps({"classes": manifest.classes, "entries": entries}, indent=2) + "\n",
        encoding="utf-8",
    )


def same_shape(a: np.ndarray, b: np.ndarray, what: str = "rasters") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ShapeMismatchError(f"{what} differ in size: {a.shape[:2]} vs {b.shape[:2]}")
