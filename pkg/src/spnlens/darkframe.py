"""Dark-frame averaging and subtraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import CalibrationMismatchError, ProtocolError, ValidationError
from .raster import CaptureMeta, CfaStack, RasterImage, merge_cfa_array, split_cfa

TEMPERATURE_TOLERANCE = 1.0  # degrees C


def _same_time(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=0.0)


@dataclass(frozen=True)
class DarkFrame:
    planes: CfaStack
    frame_count: int
    temperature: float
    integration_time: float
    camera_id: str = ""

    def __post_init__(self):
        if self.frame_count < 1:
            raise ProtocolError("dark frame needs frame_count >= 1")
        for p in self.planes.planes.values():
            if p.min() < 0 or p.max() > 1:
                raise ValidationError("dark frame values must lie in [0, 1]")

    @property
    def pixels(self) -> np.ndarray:
        return merge_cfa_array(self.planes)

    @property
    def filename(self) -> str:
        return f"{self.camera_id}_T{self.temperature:g}_t{self.integration_time:.6g}.dark"

    def save(self, path) -> Path:
        prov = {"frame_count": self.frame_count, "temperature_c": self.temperature,
                "integration_time_s": self.integration_time, "camera_id": self.camera_id,
                "layout": self.planes.layout}
        return write_container(path, "dark", dict(self.planes.planes), "", prov)

    @classmethod
    def load(cls, path) -> "DarkFrame":
        _, planes, _, prov = read_container(path, expect="dark")
        return cls(CfaStack(planes, prov.get("layout", "RGGB")), int(prov["frame_count"]),
                   float(prov["temperature_c"]), float(prov["integration_time_s"]), prov.get("camera_id", ""))


def build_dark_frame(darks, temperature_tolerance: float = TEMPERATURE_TOLERANCE) -> DarkFrame:
    """Average dark captures taken under one integration time and temperature."""
    first, total, temps = None, None, []
    for d in darks:
        if first is None:
            first, shape, total = d, d.pixels.shape, np.zeros(d.pixels.shape)
        if d.pixels.shape != shape or d.cfa_layout != first.cfa_layout:
            raise ValidationError(f"dark frame {d.pixels.shape}/{d.cfa_layout} differs from {shape}/{first.cfa_layout}")
        if not _same_time(d.meta.integration_time, first.meta.integration_time):
            raise CalibrationMismatchError(
                f"integration times differ: {d.meta.integration_time} vs {first.meta.integration_time}",
                field="integration_time")
        total += d.pixels
        temps.append(d.meta.temperature)
    if first is None:
        raise ProtocolError("no dark frames supplied")
    if max(temps) - min(temps) > temperature_tolerance:
        raise CalibrationMismatchError(
            f"dark temperatures span {min(temps)}..{max(temps)} C, over {temperature_tolerance} C",
            field="temperature")
    planes = split_cfa(first.with_pixels(np.clip(total / len(temps), 0.0, 1.0)))
    return DarkFrame(planes, len(temps), float(np.mean(temps)), first.meta.integration_time, first.meta.camera_id)


def subtract_dark(img: RasterImage, dark: DarkFrame, temperature_tolerance: float = TEMPERATURE_TOLERANCE) -> RasterImage:
    if img.cfa_layout != dark.planes.layout:
        raise CalibrationMismatchError(f"layout {img.cfa_layout} vs dark {dark.planes.layout}", field="cfa_layout")
    px = dark.pixels
    if px.shape != img.pixels.shape:
        raise CalibrationMismatchError(f"dimensions {img.pixels.shape} vs dark {px.shape}", field="dimensions")
    if not _same_time(img.meta.integration_time, dark.integration_time):
        raise CalibrationMismatchError(
            f"integration time {img.meta.integration_time} vs dark {dark.integration_time}", field="integration_time")
    if abs(img.meta.temperature - dark.temperature) > temperature_tolerance:
        raise CalibrationMismatchError(
            f"temperature {img.meta.temperature} vs dark {dark.temperature}", field="temperature")
    return img.with_pixels(np.clip(img.pixels - px, 0.0, 1.0))


def dark_as_image(dark: DarkFrame, meta: CaptureMeta | None = None) -> RasterImage:
    meta = meta or CaptureMeta(integration_time=dark.integration_time, temperature=dark.temperature,
                               camera_id=dark.camera_id)
    return RasterImage(dark.pixels, cfa_layout=dark.planes.layout, meta=meta)
