"""Image loading and on-disk formats (score tensors, embedded sequences, systems)."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ImageLoadError, ValidationError
from .grid import GridSpec

_SCORE_MAGIC = b"SCRT"
_SCORE_VERSION = 1
_SCORE_HEADER = struct.Struct("<4sIIIII")


def load_image(path, spec: GridSpec | None = None) -> np.ndarray:
    """Read an 8-bit PGM (P5) or PNG (gray or RGB) scaled into ``[0, 1]``.

    Grayscale gives ``(H, W)``; RGB gives ``(H, W, 3)``.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt not in ("PPM", "PNG"):
                raise ImageLoadError(f"{path}: unsupported format {fmt}")
            if fmt == "PPM" and mode != "L":
                raise ImageLoadError(f"{path}: only 8-bit grayscale PGM (P5) is supported")
            if mode not in ("L", "RGB"):
                raise ImageLoadError(f"{path}: unsupported pixel mode {mode} (need 8-bit L or RGB)")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, ImageLoadError):
            raise
        raise ImageLoadError(f"{path}: {exc}") from exc
    if spec is not None and arr.shape[:2] != (spec.H, spec.W):
        raise ImageLoadError(f"{path}: image is {arr.shape[1]}x{arr.shape[0]}, expected {spec.W}x{spec.H}")
    return arr


def save_pgm(path, image: np.ndarray) -> None:
    """Write a grayscale ``[0, 1]`` array as binary PGM (round to nearest level)."""
    a = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a, mode="L").save(path, format="PPM")


def channels_of(image: np.ndarray) -> list[np.ndarray]:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return [image]
    if image.ndim == 3:
        return [image[..., c] for c in range(image.shape[-1])]
    raise ValidationError(f"expected a 2-D or 3-D image, got shape {image.shape}")


def write_scores(path, scores: np.ndarray, manifest: dict | None = None) -> dict:
    """Write a ``(T, C, H, W, 2)`` score array plus a JSON sidecar ``<path>.json``.

    Returns the manifest that was written, with the payload checksum filled in.
    """
    s = np.asarray(scores, dtype="<f8")
    if s.ndim != 5 or s.shape[-1] != 2:
        raise ValidationError(f"scores must have shape (T, C, H, W, 2), got {s.shape}")
    T, C, H, W, _ = s.shape
    payload = _SCORE_HEADER.pack(_SCORE_MAGIC, _SCORE_VERSION, T, H, W, C) + s.tobytes(order="C")
    path = Path(path)
    path.write_bytes(payload)
    manifest = dict(manifest or {})
    manifest["checksum"] = "sha256:" + hashlib.sha256(payload).hexdigest()
    manifest.setdefault("shape", [T, C, H, W, 2])
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_scores(path, verify: bool = True) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _SCORE_HEADER.size:
        raise ValidationError(f"{path}: truncated score file")
    magic, version, T, H, W, C = _SCORE_HEADER.unpack_from(data)
    if magic != _SCORE_MAGIC or version != _SCORE_VERSION:
        raise ValidationError(f"{path}: not a version-{_SCORE_VERSION} SCRT file")
    count = T * C * H * W * 2
    if len(data) != _SCORE_HEADER.size + 8 * count:
        raise ValidationError(f"{path}: payload size does not match header")
    if verify:
        side = Path(str(path) + ".json")
        if side.exists():
            expected = json.loads(side.read_text()).get("checksum")
            actual = "sha256:" + hashlib.sha256(data).hexdigest()
            if expected and expected != actual:
                raise ValidationError(f"{path}: checksum mismatch")
    return np.frombuffer(data, dtype="<f8", offset=_SCORE_HEADER.size).reshape(T, C, H, W, 2).astype(np.float64)


def write_embedded(path, values: np.ndarray, rule: str) -> None:
    """Store an embedded sequence ``(T + 1, [C,] H, W)`` as ``.npz``."""
    np.savez(path, values=np.asarray(values, dtype=np.float64), rule=np.array(rule))


def read_embedded(path) -> tuple[np.ndarray, str]:
    with np.load(path) as z:
        return z["values"], str(z["rule"])


def write_system(path, system) -> None:
    """Dump a :class:`~fpkrylov.stencil.BandedSystem` as ``.npz`` (bands keyed by offset)."""
    np.savez(
        path,
        H=np.int64(system.H),
        offsets=np.array(sorted(system.bands)),
        bands=np.stack([system.bands[o] for o in sorted(system.bands)]),
        rhs=system.rhs,
    )
