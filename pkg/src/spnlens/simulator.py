"""Synthetic sensor, lens and flat-field capture model.

A frame is the sum of a light term and a dark term followed by per-frame
random noise and ADC quantisation::

    light = scene * (1 + a*H) * (1 - vignette) * dust * (1 + K)
    dark  = D0 * 2**((T - 30) / doubling) * t
    pixel = adc(shot(light + dark) + read + flicker + reset)

K (PRNU gain map) and D0 (dark-rate map) belong to the sensor; H (a zero-mean,
unit-variance high-pass field), the vignette and dust belong to the lens, so a
lens carries the same H to whichever camera it is mounted on. Every array is
a pure function of the profile seeds and the frame seed.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoise import DenoiseConfig, extract_residue
from .errors import ProtocolError, ValidationError
from .raster import PINHOLE, CaptureMeta, RasterImage, cfa_phase, save_raw, zero_mean

T_REF = 30.0
# 0.2% of full scale at the 1/1008 s reference integration time
DEFAULT_DARK_RATE = 0.002 * 1008.0


@dataclass(frozen=True)
class NoiseSources:
    shot: bool = True
    full_well: float = 10000.0
    read_std: float = 0.001
    adc_bits: int | None = 10
    flicker_amp: float = 0.0
    reset_std: float = 0.0

    def __post_init__(self):
        for name in ("full_well", "read_std", "flicker_amp", "reset_std"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.adc_bits is not None and not 1 <= self.adc_bits <= 16:
            raise ValidationError("adc_bits must be in 1..16 or None")
        if self.shot and self.full_well <= 0:
            raise ValidationError("shot noise needs a positive full_well")

    @property
    def quant_step(self) -> float:
        return 0.0 if self.adc_bits is None else 1.0 / ((1 << self.adc_bits) - 1)


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


@dataclass(frozen=True)
class SensorProfile:
    seed: int
    height: int = 256
    width: int = 256
    prnu_std: float = 0.01
    dark_rate_mean: float = DEFAULT_DARK_RATE
    dark_rate_std_frac: float = 0.5
    dark_doubling: float = 6.0
    noise: NoiseSources = field(default_factory=NoiseSources)
    camera_id: str = ""
    cfa_layout: str = "RGGB"

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValidationError("sensor needs at least 2x2 pixels")
        if self.prnu_std < 0 or self.dark_rate_mean < 0 or self.dark_rate_std_frac < 0 or self.dark_doubling <= 0:
            raise ValidationError("sensor magnitudes must be non-negative (doubling positive)")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSources(**self.noise))
        if not self.camera_id:
            object.__setattr__(self, "camera_id", f"cam{self.seed}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @functools.cached_property
    def prnu_map(self) -> np.ndarray:
        k = _rng(self.seed, 1).normal(0.0, 1.0, self.shape) * self.prnu_std
        k -= k.mean()
        k.setflags(write=False)
        return k

    @functools.cached_property
    def dark_map(self) -> np.ndarray:
        m, f = self.dark_rate_mean, self.dark_rate_std_frac
        if m == 0 or f == 0:
            d = np.full(self.shape, m)
        else:
            shape_k = 1.0 / (f * f)
            d = _rng(self.seed, 2).gamma(shape_k, m / shape_k, self.shape)
        d.setflags(write=False)
        return d

    def dark_level(self, temperature: float, integration_time: float) -> np.ndarray:
        return self.dark_map * (2.0 ** ((temperature - T_REF) / self.dark_doubling)) * integration_time

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SensorProfile":
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseSources(**d["noise"])
        return cls(**d)


@functools.lru_cache(maxsize=64)
def _high_pass_field(seed: int, shape: tuple, cutoff: float) -> np.ndarray:
    white = _rng(seed, 3).normal(size=shape)
    spec = np.fft.fft2(white)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    spec[np.hypot(fy, fx) < cutoff] = 0.0
    h = np.real(np.fft.ifft2(spec))
    h -= h.mean()
    h /= h.std()
    h.setflags(write=False)
    return h


@dataclass(frozen=True)
class LensProfile:
    seed: int = 0
    lens_id: str = ""
    aberration_amp: float = 0.005
    vignette_strength: float = 0.1
    cutoff: float = 0.1  # cycles per pixel below which H carries no power
    dust: tuple = ()  # (cx, cy, radius, opacity) in pixels

    def __post_init__(self):
        if self.aberration_amp < 0 or not 0 <= self.vignette_strength < 1:
            raise ValidationError("invalid lens magnitudes")
        object.__setattr__(self, "dust", tuple(tuple(float(v) for v in d) for d in self.dust))
        if not self.lens_id:
            object.__setattr__(self, "lens_id", f"lens{self.seed}")

    @classmethod
    def pinhole(cls, vignette_strength: float = 0.1) -> "LensProfile":
        return cls(seed=0, lens_id=PINHOLE, aberration_amp=0.0, vignette_strength=vignette_strength)

    @property
    def is_pinhole(self) -> bool:
        return self.lens_id == PINHOLE

    def aberration_field(self, shape) -> np.ndarray:
        return _high_pass_field(self.seed, tuple(shape), self.cutoff)

    def vignette(self, shape) -> np.ndarray:
        h, w = shape
        y = np.arange(h) - (h - 1) / 2
        x = np.arange(w) - (w - 1) / 2
        r2 = (y[:, None] ** 2 + x[None, :] ** 2) / ((h - 1) ** 2 / 4 + (w - 1) ** 2 / 4)
        return self.vignette_strength * r2

    def dust_transmission(self, shape) -> np.ndarray:
        t = np.ones(shape)
        if not self.dust:
            return t
        yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
        for cx, cy, radius, opacity in self.dust:
            cover = np.clip(radius - np.hypot(xx - cx, yy - cy) + 0.5, 0.0, 1.0)
            t *= 1.0 - opacity * cover
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dust"] = [list(x) for x in self.dust]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LensProfile":
        d = dict(d)
        d["dust"] = tuple(tuple(x) for x in d.get("dust", ()))
        return cls(**d)


@dataclass(frozen=True)
class CaptureRequest:
    scene: float = 0.6
    integration_time: float = 1.0 / 1008.0
    temperature: float = T_REF
    frame_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.scene <= 1.0:
            raise ValidationError(f"scene level {self.scene} outside [0, 1]")
        if self.integration_time <= 0:
            raise ValidationError("integration_time must be > 0")


COMPONENTS = ("prnu", "dark", "los", "vignette")


def render_expected(sensor: SensorProfile, lens: LensProfile, req: CaptureRequest, components=COMPONENTS) -> np.ndarray:
    """Noise-free expected frame, before shot noise and quantisation.

    ``components`` switches individual deterministic terms on; a term that is
    off contributes its neutral value (dark current at its spatial mean).
    """
    shape = sensor.shape
    light = np.full(shape, req.scene)
    if "los" in components:
        if lens.aberration_amp:
            light = light * (1.0 + lens.aberration_amp * lens.aberration_field(shape))
        light = light * lens.dust_transmission(shape)
    if "vignette" in components:
        light = light * (1.0 - lens.vignette(shape))
    if "prnu" in components:
        light = light * (1.0 + sensor.prnu_map)
    dark = sensor.dark_level(req.temperature, req.integration_time)
    if "dark" not in components:
        dark = np.full(shape, dark.mean())
    return light + dark


def _flicker_field(rng, shape, amp) -> np.ndarray:
    spec = np.fft.fft2(rng.normal(size=shape))
    f = np.hypot(np.fft.fftfreq(shape[0])[:, None], np.fft.fftfreq(shape[1])[None, :])
    f[0, 0] = np.inf
    g = np.real(np.fft.ifft2(spec / np.sqrt(f)))
    return amp * (g - g.mean()) / g.std()


def quantize(values: np.ndarray, adc_bits: int | None) -> np.ndarray:
    v = np.clip(values, 0.0, 1.0)
    if adc_bits is None:
        return v
    full = (1 << adc_bits) - 1
    return np.rint(v * full) / full


def render_frame(sensor: SensorProfile, lens: LensProfile, req: CaptureRequest) -> RasterImage:
    expected = render_expected(sensor, lens, req)
    ns = sensor.noise
    rng = _rng(sensor.seed, lens.seed, req.frame_seed, 7)
    sig = expected
    if ns.shot:
        sig = rng.poisson(np.maximum(expected, 0.0) * ns.full_well) / ns.full_well
    if ns.read_std:
        sig = sig + rng.normal(0.0, ns.read_std, sensor.shape)
    if ns.flicker_amp:
        sig = sig + _flicker_field(rng, sensor.shape, ns.flicker_amp)
    if ns.reset_std:
        sig = sig + rng.normal(0.0, ns.reset_std, sensor.shape)
    meta = CaptureMeta(integration_time=req.integration_time, temperature=req.temperature,
                       camera_id=sensor.camera_id, lens_id=lens.lens_id, illumination=req.scene)
    return RasterImage(quantize(sig, ns.adc_bits), bit_depth=ns.adc_bits or 16,
                       cfa_layout=sensor.cfa_layout, meta=meta)


# --------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class GroundTruth:
    """Expected correlation energies of each injected pattern.

    ``powers`` are mean residue powers per pixel (averaged over CFA planes);
    the energies divide them by the correlation-scale total
    ``sqrt(E|ref|^2 * E|iut|^2)`` of the lens condition.
    """

    prnu: float
    fpn: float
    los: float
    powers: dict

    @property
    def spn(self) -> float:
        return self.prnu + self.fpn

    @property
    def extended_fingerprint(self) -> float:
        return self.spn + self.los

    def to_dict(self) -> dict:
        return {"prnu": self.prnu, "fpn": self.fpn, "los": self.los, "spn": self.spn,
                "extended_fingerprint": self.extended_fingerprint, "powers": dict(self.powers)}


def _plane_residues(arr: np.ndarray, layout: str, cfg: DenoiseConfig, window=None) -> list[np.ndarray]:
    if window is not None:
        x, y, w, h = window
        arr = arr[y : y + h, x : x + w]
    return [extract_residue(zero_mean(arr[dy::2, dx::2]), cfg).residue for dy, dx in cfa_phase(layout).values()]


def ground_truth_energies(sensor: SensorProfile, lens: LensProfile, cfg: DenoiseConfig | None = None,
                          req: CaptureRequest | None = None, reference_count: int = 50,
                          window=None, draws: int = 12) -> GroundTruth:
    """Oracle energies for the decomposition, from the noiseless patterns.

    Each pattern is pushed through the residue filter on top of Gaussian
    noise draws matching the frame noise. The paired difference against the
    noise-only residue isolates the pattern's filtered response at the
    filter's real operating point; its draw-to-draw coherent part is what a
    frame-averaged reference and a single test residue have in common. The
    uncorrelated part of the total comes from the residue power of the full
    noisy frame.
    """
    if draws < 2:
        raise ValidationError("ground truth needs at least two noise draws")
    cfg = cfg or DenoiseConfig()
    req = req or CaptureRequest()
    ns = sensor.noise
    base = render_expected(sensor, lens, req, components=("vignette",))
    full = render_expected(sensor, lens, req)
    with_comp = {
        "prnu": render_expected(sensor, lens, req, components=("vignette", "prnu")),
        "dark": render_expected(sensor, lens, req, components=("vignette", "dark")),
        "los": render_expected(sensor, lens, req, components=("vignette", "los")),
    }
    var = np.full(sensor.shape, ns.read_std ** 2 + ns.reset_std ** 2 + ns.quant_step ** 2 / 12.0)
    if ns.shot:
        var = var + np.maximum(full, 0.0) / ns.full_well
    std = np.sqrt(var)

    sums = {k: None for k in with_comp}
    sq = {k: np.zeros(4) for k in with_comp}
    frame_power = np.zeros(4)
    for d in range(draws):
        noise = _rng(sensor.seed, lens.seed, d, 11).normal(size=sensor.shape) * std
        ref = _plane_residues(base + noise, sensor.cfa_layout, cfg, window)
        frame_power += [np.mean(r * r) for r in _plane_residues(full + noise, sensor.cfa_layout, cfg, window)]
        for k, img in with_comp.items():
            diff = [a - b for a, b in zip(_plane_residues(img + noise, sensor.cfa_layout, cfg, window), ref)]
            sums[k] = diff if sums[k] is None else [s + x for s, x in zip(sums[k], diff)]
            sq[k] += [np.mean(x * x) for x in diff]
    # unbiased |E x|^2 from draws: (|sum|^2 - sum |x|^2) / (D (D - 1))
    coherent = {k: (np.array([np.mean(s * s) for s in sums[k]]) - sq[k]) / (draws * (draws - 1))
                for k in with_comp}
    iut_power = frame_power / draws
    pattern = coherent["prnu"] + coherent["dark"] + coherent["los"]
    ref_power = pattern + (iut_power - pattern) / reference_count
    total = np.sqrt(ref_power * iut_power)
    energy = {k: float(np.mean(coherent[k] / total)) for k in with_comp}
    powers = {k: float(np.mean(v)) for k, v in coherent.items()}
    powers["frame"] = float(np.mean(iut_power))
    return GroundTruth(energy["prnu"], energy["dark"], energy["los"], powers)


# --------------------------------------------------------------------------
# datasets


DEFAULT_SCENARIO = {
    "name": "desk",
    "seed": 2018,
    "width": 256,
    "height": 256,
    "cameras": 3,
    "lenses": 2,
    "include_pinhole": True,
    "frames": 60,
    "darks": 200,
    "heldout_darks": 50,
    "scene_level": 0.6,
    "integration_time": 1.0 / 1008.0,
    "temperature": T_REF,
    # shot-noise dominated flat fields keep matched correlations small, where
    # correlation is close to additive in the pattern energies
    "sensor": {"noise": {"full_well": 100.0}},
    "lens": {},
}


def scenario_profiles(scenario: dict):
    """Build the (sensors, lenses) a scenario describes, seeds included."""
    sc = {**DEFAULT_SCENARIO, **scenario}
    base_seed = int(sc["seed"])
    sensor_defaults = dict(sc.get("sensor") or {})
    lens_defaults = dict(sc.get("lens") or {})

    cams = sc["cameras"]
    cams = [{} for _ in range(cams)] if isinstance(cams, int) else list(cams)
    sensors = []
    for i, c in enumerate(cams):
        d = {**sensor_defaults, **c}
        seed = int(d.pop("seed", base_seed + 101 * (i + 1)))
        cid = d.pop("id", d.pop("camera_id", f"cam{i}"))
        noise = {**(sensor_defaults.get("noise") or {}), **(c.get("noise") or {})}
        d.pop("noise", None)
        sensors.append(SensorProfile(seed=seed, height=int(sc["height"]), width=int(sc["width"]),
                                     camera_id=cid, noise=NoiseSources(**noise), **d))

    lens_entries = sc["lenses"]
    lens_entries = [{} for _ in range(lens_entries)] if isinstance(lens_entries, int) else list(lens_entries)
    lenses = []
    for j, l in enumerate(lens_entries):
        d = {**lens_defaults, **l}
        seed = int(d.pop("seed", base_seed + 7919 * (j + 1)))
        lid = d.pop("id", d.pop("lens_id", f"lens{j}"))
        lenses.append(LensProfile(seed=seed, lens_id=lid, **d))
    if sc.get("include_pinhole", True):
        lenses.append(LensProfile.pinhole(float(lens_defaults.get("vignette_strength", 0.1))))
    return sensors, lenses


def render_dataset(scenario: dict, out_dir) -> dict:
    """Render every frame of a scenario to ``out_dir`` and write ``manifest.json``.

    Returns the manifest. Frame paths in the manifest are relative to
    ``out_dir``.
    """
    sc = {**DEFAULT_SCENARIO, **scenario}
    n_frames = int(sc["frames"])
    if n_frames <= 0:
        raise ProtocolError("scenario requests no frames")
    sensors, lenses = scenario_profiles(sc)
    if not sensors or not lenses:
        raise ProtocolError("scenario needs at least one camera and one lens")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    t, temp, level = float(sc["integration_time"]), float(sc["temperature"]), float(sc["scene_level"])

    def emit(sensor, lens, kind, idx, seed, scene):
        img = render_frame(sensor, lens, CaptureRequest(scene, t, temp, seed))
        tag = "DARK" if kind != "light" else lens.lens_id
        image_id = f"{sensor.camera_id}_{tag}_{kind[0]}{idx:04d}"
        rel = Path("frames") / sensor.camera_id / tag / f"{image_id}.raw"
        try:
            save_raw(img, out_dir / rel)
        except OSError as exc:
            raise OSError(f"failed writing {out_dir / rel}: {exc}") from exc
        frames.append({"path": rel.as_posix(), "image_id": image_id, "camera_id": sensor.camera_id,
                       "lens_id": lens.lens_id if kind == "light" else PINHOLE, "kind": kind, "frame_seed": seed})

    dark_lens = LensProfile.pinhole()
    for sensor in sensors:
        for lens in lenses:
            for i in range(n_frames):
                emit(sensor, lens, "light", i, i, level)
        for i in range(int(sc["darks"])):
            emit(sensor, dark_lens, "dark", i, 1_000_000 + i, 0.0)
        for i in range(int(sc.get("heldout_darks", 0))):
            emit(sensor, dark_lens, "heldout_dark", i, 2_000_000 + i, 0.0)

    manifest = {
        "scenario": sc,
        "cameras": {s.camera_id: s.to_dict() for s in sensors},
        "lenses": {l.lens_id: l.to_dict() for l in lenses},
        "frames": frames,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    m = json.loads(path.read_text())
    m["_root"] = str(path.parent)
    return m
