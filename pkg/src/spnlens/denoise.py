"""Wavelet-coring noise residue with an overlapping half-stride block schedule.

Each plane is cut into square blocks laid at a stride of half a block. Every
block is filtered on its own (periodic wavelet boundary), and only the central
half of each filtered block is kept. Blocks on the plane border keep their
outer margin through to the border, so the kept regions tile the plane exactly
once and no block edge ever lands in the interior of the output.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pywt
from scipy.ndimage import uniform_filter

from .errors import ShapeError, ValidationError
from .raster import CaptureMeta


@dataclass(frozen=True)
class DenoiseConfig:
    block_size: int = 128
    wavelet_levels: int = 4
    sigma0_sq: float = (3.0 / 255.0) ** 2
    variance_windows: tuple = (3, 5, 7, 9)
    wavelet: str = "db4"

    def __post_init__(self):
        object.__setattr__(self, "variance_windows", tuple(int(w) for w in self.variance_windows))
        if self.block_size <= 0 or self.block_size % 4:
            raise ValidationError(f"block_size must be a positive multiple of 4, got {self.block_size}")
        if self.wavelet_levels < 1:
            raise ValidationError("wavelet_levels must be >= 1")
        if self.block_size % (1 << self.wavelet_levels):
            raise ValidationError(
                f"block_size {self.block_size} not divisible by 2**{self.wavelet_levels}"
            )
        if not self.sigma0_sq >= 0:
            raise ValidationError("sigma0_sq must be >= 0")
        if not self.variance_windows or any(w < 1 or w % 2 == 0 for w in self.variance_windows):
            raise ValidationError(f"variance windows must be odd positive sizes, got {self.variance_windows}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variance_windows"] = list(self.variance_windows)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiseConfig":
        known = {k: d[k] for k in ("block_size", "wavelet_levels", "sigma0_sq", "variance_windows", "wavelet") if k in d}
        return cls(**known)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class NoiseResidue:
    residue: np.ndarray
    config_hash: str = ""
    meta: CaptureMeta = field(default_factory=CaptureMeta)
    passes: int = 0


# --------------------------------------------------------------------------
# wavelet pyramid


def wavelet_decompose(block, levels: int, wavelet: str = "db4") -> list:
    """Orthonormal 2-D DWT with periodic extension.

    Returns ``[approx, (H, V, D) coarsest, ..., (H, V, D) finest]`` in the
    pywt ordering.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ShapeError(f"wavelet block must be square, got {block.shape}")
    if levels < 1 or block.shape[0] % (1 << levels):
        raise ShapeError(f"block edge {block.shape[0]} not divisible by 2**{levels}")
    with warnings.catch_warnings():
        # pywt warns when the filter is longer than the coarsest band; periodic
        # extension handles that exactly
        warnings.simplefilter("ignore", UserWarning)
        return pywt.wavedec2(block, wavelet, mode="periodization", level=levels)


def wavelet_reconstruct(coeffs: list, wavelet: str = "db4") -> np.ndarray:
    return pywt.waverec2(coeffs, wavelet, mode="periodization")


def _local_variance(detail: np.ndarray, sigma0_sq: float, windows) -> np.ndarray:
    sq = detail * detail
    est = None
    for w in windows:
        m = uniform_filter(sq, size=w, mode="wrap") - sigma0_sq
        est = m if est is None else np.minimum(est, m)
    return np.maximum(est, 0.0)


def _gain(detail, sigma0_sq, windows) -> np.ndarray:
    if sigma0_sq == 0:
        return np.ones_like(detail)
    var = _local_variance(detail, sigma0_sq, windows)
    return var / (var + sigma0_sq)


def core_subband(detail, sigma0_sq: float, windows=(3, 5, 7, 9)) -> np.ndarray:
    """Local-variance MAP (Wiener) shrinkage of one detail subband.

    The signal variance at each coefficient is the smallest, over all windows,
    of the local second moment minus the noise floor, clipped at zero.
    """
    detail = np.asarray(detail, dtype=np.float64)
    return detail * _gain(detail, sigma0_sq, windows)


def _split_pyramid(block, cfg: DenoiseConfig):
    coeffs = wavelet_decompose(block, cfg.wavelet_levels, cfg.wavelet)
    kept, removed = [coeffs[0]], [np.zeros_like(coeffs[0])]
    for level in coeffs[1:]:
        k_lvl, r_lvl = [], []
        for d in level:
            g = _gain(d, cfg.sigma0_sq, cfg.variance_windows)
            k_lvl.append(d * g)
            r_lvl.append(d * (1.0 - g))
        kept.append(tuple(k_lvl))
        removed.append(tuple(r_lvl))
    return kept, removed


def denoised_block(block, cfg: DenoiseConfig) -> np.ndarray:
    """Denoised estimate: full approximation band plus cored details."""
    kept, _ = _split_pyramid(_check_block(block, cfg), cfg)
    return wavelet_reconstruct(kept, cfg.wavelet)


def denoise_block(block, cfg: DenoiseConfig) -> np.ndarray:
    """Noise residue of one block, ``block - denoised_block(block)``.

    Computed directly from the coefficients the coring removed, so the
    approximation band never enters the residue.
    """
    _, removed = _split_pyramid(_check_block(block, cfg), cfg)
    return wavelet_reconstruct(removed, cfg.wavelet)


def _check_block(block, cfg):
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (cfg.block_size, cfg.block_size):
        raise ShapeError(f"block shape {block.shape} != ({cfg.block_size}, {cfg.block_size})")
    return block


# --------------------------------------------------------------------------
# block schedule


def block_schedule(length: int, block: int) -> list[tuple[int, int, int]]:
    """Block starts along one axis and the slice each one keeps.

    Returns ``(start, keep_lo, keep_hi)`` in plane coordinates. Blocks sit at
    a stride of ``block // 2``; each keeps its central half except that the
    first and last blocks keep through to the plane edge.
    """
    half, quarter = block // 2, block // 4
    if length < block or length % half:
        raise ShapeError(f"plane length {length} must be >= {block} and a multiple of {half}")
    starts = list(range(0, length - block + 1, half))
    out = []
    for i, s in enumerate(starts):
        lo = 0 if i == 0 else s + quarter
        hi = length if i == len(starts) - 1 else s + block - quarter
        out.append((s, lo, hi))
    return out


def pass_count(shape, block: int) -> int:
    return len(block_schedule(shape[0], block)) * len(block_schedule(shape[1], block))


def coverage_mask(shape, block: int) -> np.ndarray:
    """How many blocks write each output pixel (ones everywhere when tiling is exact)."""
    cov = np.zeros(shape, dtype=np.int64)
    for _, y0, y1 in block_schedule(shape[0], block):
        for _, x0, x1 in block_schedule(shape[1], block):
            cov[y0:y1, x0:x1] += 1
    return cov


def extract_residue(plane, cfg: DenoiseConfig | None = None, meta: CaptureMeta | None = None) -> NoiseResidue:
    """Noise residue of a whole plane by stitching overlapping block passes."""
    cfg = cfg or DenoiseConfig()
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"plane must be 2-D, got {plane.shape}")
    b = cfg.block_size
    rows = block_schedule(plane.shape[0], b)
    cols = block_schedule(plane.shape[1], b)
    if plane.size and np.all(plane == plane.flat[0]):
        # mean rounding would otherwise leak ~1e-32 through the filter
        return NoiseResidue(np.zeros_like(plane), cfg.hash, meta or CaptureMeta(), len(rows) * len(cols))
    plane = plane - plane.mean()
    out = np.empty_like(plane)
    for ys, y0, y1 in rows:
        for xs, x0, x1 in cols:
            res = denoise_block(plane[ys : ys + b, xs : xs + b], cfg)
            out[y0:y1, x0:x1] = res[y0 - ys : y1 - ys, x0 - xs : x1 - xs]
    out -= out.mean()
    return NoiseResidue(out, config_hash=cfg.hash, meta=meta or CaptureMeta(), passes=len(rows) * len(cols))


def save_residue(res: NoiseResidue, path):
    from .container import write_container

    prov = {"meta": res.meta.to_dict(), "passes": res.passes}
    return write_container(path, "residue", {"Y": res.residue}, res.config_hash, prov)


def load_residue(path) -> NoiseResidue:
    from .container import read_container

    _, planes, cfg_hash, prov = read_container(path, expect="residue")
    if list(planes) != ["Y"]:
        raise ShapeError(f"{path}: holds planes {list(planes)}, not a single-plane residue")
    return NoiseResidue(planes["Y"], cfg_hash, CaptureMeta.from_dict(prov.get("meta", {})), prov.get("passes", 0))
