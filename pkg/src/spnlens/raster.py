"""Raw frame representation, ingestion and CFA plane handling.

Pixels are stored as float64 in [0, 1]; the integer range of the source ADC is
mapped affinely so that 0 -> 0.0 and 2**bit_depth - 1 -> 1.0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    CfaPhaseError,
    CropRangeError,
    DecodeError,
    UnsupportedLayoutError,
    ValidationError,
)

PINHOLE = "PINHOLE"
CFA_LABELS = ("R", "G1", "G2", "B")
LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG", "MONO")

# (row, col) phase of each labelled plane inside the 2x2 Bayer cell
_PHASES = {
    "RGGB": {"R": (0, 0), "G1": (0, 1), "G2": (1, 0), "B": (1, 1)},
    "BGGR": {"B": (0, 0), "G1": (0, 1), "G2": (1, 0), "R": (1, 1)},
    "GRBG": {"G1": (0, 0), "R": (0, 1), "B": (1, 0), "G2": (1, 1)},
    "GBRG": {"G1": (0, 0), "B": (0, 1), "R": (1, 0), "G2": (1, 1)},
}


def cfa_phase(layout: str) -> dict[str, tuple[int, int]]:
    """Return ``{label: (dy, dx)}`` for a Bayer layout."""
    try:
        return _PHASES[layout]
    except KeyError:
        raise UnsupportedLayoutError(f"no CFA phases for layout {layout!r}") from None


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CaptureMeta:
    integration_time: float = 1.0 / 1008.0
    temperature: float = 30.0
    camera_id: str = ""
    lens_id: str = ""
    illumination: float = 1.0

    def __post_init__(self):
        if not self.integration_time > 0:
            raise ValidationError(f"integration_time must be > 0, got {self.integration_time}")
        if not math.isfinite(self.temperature):
            raise ValidationError("temperature must be finite")

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "lens_id": self.lens_id,
            "integration_time_s": self.integration_time,
            "temperature_c": self.temperature,
            "illumination": self.illumination,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureMeta":
        return cls(
            integration_time=float(d.get("integration_time_s", 1.0 / 1008.0)),
            temperature=float(d.get("temperature_c", 30.0)),
            camera_id=str(d.get("camera_id", "")),
            lens_id=str(d.get("lens_id", "")),
            illumination=float(d.get("illumination", 1.0)),
        )


@dataclass(frozen=True)
class RasterImage:
    """Single-channel raw frame with intensities normalised to [0, 1]."""

    pixels: np.ndarray
    bit_depth: int = 10
    cfa_layout: str = "RGGB"
    meta: CaptureMeta = field(default_factory=CaptureMeta)

    def __post_init__(self):
        px = _frozen(self.pixels)
        if px.ndim != 2:
            raise ValidationError(f"pixels must be 2-D, got shape {px.shape}")
        if self.cfa_layout not in LAYOUTS:
            raise UnsupportedLayoutError(f"unknown CFA layout {self.cfa_layout!r}")
        if px.size and (not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        if self.cfa_layout != "MONO":
            h, w = px.shape
            if h < 2 or w < 2 or h % 2 or w % 2:
                raise CfaPhaseError(f"CFA image needs even dimensions >= 2, got {w}x{h}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels) -> "RasterImage":
        return replace(self, pixels=pixels)


@dataclass(frozen=True)
class CfaStack:
    """The four Bayer sub-planes of one image, keyed by colour label."""

    planes: dict
    layout: str = "RGGB"

    def __post_init__(self):
        if set(self.planes) != set(CFA_LABELS):
            raise ValidationError(f"CfaStack needs planes {CFA_LABELS}, got {sorted(self.planes)}")
        planes = {k: _frozen(self.planes[k]) for k in CFA_LABELS}
        shapes = {p.shape for p in planes.values()}
        if len(shapes) != 1:
            raise ValidationError(f"CFA planes differ in shape: {sorted(shapes)}")
        object.__setattr__(self, "planes", planes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes["R"].shape

    def __getitem__(self, label: str) -> np.ndarray:
        return self.planes[label]

    def map(self, fn) -> "CfaStack":
        return CfaStack({k: fn(v) for k, v in self.planes.items()}, self.layout)


# --------------------------------------------------------------------------
# raw ingestion


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def load_raw(path, layout: str | None = None, bit_depth: int | None = None, shape=None) -> RasterImage:
    """Read a headerless little-endian uint16 frame.

    Dimensions, depth and capture metadata come from the ``<name>.meta.json``
    sidecar when it exists; explicit arguments fill in for a missing sidecar.
    Without either, the frame is assumed square.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    if len(raw) % 2:
        raise DecodeError(f"{path}: odd byte count {len(raw)} for uint16 samples")
    samples = np.frombuffer(raw, dtype="<u2")

    side = sidecar_path(path)
    meta = CaptureMeta()
    if side.exists():
        try:
            info = json.loads(side.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DecodeError(f"{side}: {exc}") from exc
        h, w = int(info["height"]), int(info["width"])
        depth = int(info.get("bit_depth", bit_depth or 16))
        lay = info.get("cfa_layout", layout or "RGGB")
        if bit_depth is not None and bit_depth != depth:
            raise ValidationError(f"{path}: bit depth {bit_depth} disagrees with manifest {depth}")
        if layout is not None and layout != lay:
            raise ValidationError(f"{path}: layout {layout} disagrees with manifest {lay}")
        meta = CaptureMeta.from_dict(info)
    else:
        depth = 16 if bit_depth is None else bit_depth
        lay = layout or "RGGB"
        if shape is not None:
            h, w = shape
        else:
            side_len = math.isqrt(samples.size)
            if side_len * side_len != samples.size:
                raise DecodeError(f"{path}: {samples.size} samples and no sidecar to give dimensions")
            h = w = side_len

    if samples.size != h * w:
        raise ValidationError(f"{path}: {samples.size} samples but manifest declares {w}x{h}")
    if not 1 <= depth <= 16:
        raise DecodeError(f"{path}: unsupported bit depth {depth}")
    full = (1 << depth) - 1
    if samples.size and samples.max() > full:
        raise DecodeError(f"{path}: sample {samples.max()} exceeds {depth}-bit range")
    pixels = samples.reshape(h, w).astype(np.float64) / full
    return RasterImage(pixels, bit_depth=depth, cfa_layout=lay, meta=meta)


def save_raw(img: RasterImage, path) -> Path:
    """Write ``img`` as ``<name>.raw`` plus its JSON sidecar. Returns the raw path."""
    path = Path(path)
    depth = min(img.bit_depth, 16) or 16
    full = (1 << depth) - 1
    codes = np.rint(img.pixels * full).astype("<u2")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(codes.tobytes())
    os.replace(tmp, path)
    info = {"width": img.width, "height": img.height, "bit_depth": depth, "cfa_layout": img.cfa_layout}
    info.update(img.meta.to_dict())
    sidecar_path(path).write_text(json.dumps(info, indent=1, sort_keys=True))
    return path


# --------------------------------------------------------------------------
# geometry


def crop(img: RasterImage, offset_x: int, offset_y: int, w: int, h: int) -> RasterImage:
    if offset_x < 0 or offset_y < 0 or w <= 0 or h <= 0 or offset_x + w > img.width or offset_y + h > img.height:
        raise CropRangeError(
            f"window ({offset_x},{offset_y}) {w}x{h} outside {img.width}x{img.height} image"
        )
    if img.cfa_layout != "MONO" and (offset_x % 2 or offset_y % 2 or w % 2 or h % 2):
        raise CfaPhaseError(f"odd crop offset/size ({offset_x},{offset_y}) {w}x{h} breaks CFA phase")
    return img.with_pixels(img.pixels[offset_y : offset_y + h, offset_x : offset_x + w])


def split_cfa(img: RasterImage) -> CfaStack:
    if img.cfa_layout == "MONO":
        raise UnsupportedLayoutError("cannot split a MONO image into CFA planes")
    phases = cfa_phase(img.cfa_layout)
    px = img.pixels
    return CfaStack({lab: px[dy::2, dx::2] for lab, (dy, dx) in phases.items()}, img.cfa_layout)


def merge_cfa_array(stack: CfaStack) -> np.ndarray:
    """Interleave the four planes back into one 2-D array (any real values)."""
    phases = cfa_phase(stack.layout)
    h, w = stack.shape
    out = np.empty((2 * h, 2 * w), dtype=np.float64)
    for lab, (dy, dx) in phases.items():
        out[dy::2, dx::2] = stack[lab]
    return out


def merge_cfa(stack: CfaStack, bit_depth: int = 10, meta: CaptureMeta | None = None) -> RasterImage:
    return RasterImage(merge_cfa_array(stack), bit_depth=bit_depth, cfa_layout=stack.layout, meta=meta or CaptureMeta())


def zero_mean(plane) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.size == 0:
        raise ValidationError("zero_mean of an empty plane")
    out = plane - plane.mean()
    # second pass removes the rounding left by the first
    return out - out.mean()
