"""Reference patterns, per-plane correlation and camera-level match scores."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .denoise import DenoiseConfig, extract_residue
from .errors import DegenerateInputError, IngestionError, ProtocolError, ValidationError
from .raster import CFA_LABELS, CfaStack, RasterImage, crop, split_cfa, zero_mean

SCORE_COLUMNS = ("camera_id", "lens_id", "ref_id", "image_id",
                 "corr_R", "corr_G1", "corr_G2", "corr_B", "corr_mean")


@dataclass(frozen=True)
class ReferencePattern:
    planes: CfaStack
    frame_count: int
    camera_id: str = ""
    lens_id: str = ""
    config_hash: str = ""

    def __post_init__(self):
        if self.frame_count < 1:
            raise ProtocolError("a reference pattern needs frame_count >= 1")

    @property
    def ref_id(self) -> str:
        return f"{self.camera_id}_{self.lens_id}"

    def save(self, path) -> Path:
        prov = {"camera_id": self.camera_id, "lens_id": self.lens_id,
                "frame_count": self.frame_count, "layout": self.planes.layout}
        return write_container(path, "reference", dict(self.planes.planes), self.config_hash, prov)

    @classmethod
    def load(cls, path) -> "ReferencePattern":
        _, planes, cfg_hash, prov = read_container(path, expect="reference")
        return cls(CfaStack(planes, prov.get("layout", "RGGB")), int(prov["frame_count"]),
                   prov.get("camera_id", ""), prov.get("lens_id", ""), cfg_hash)


@dataclass(frozen=True)
class MatchScore:
    per_plane: dict
    image_id: str = ""
    ref_id: str = ""

    @property
    def value(self) -> float:
        return float(np.mean([self.per_plane[k] for k in CFA_LABELS]))


def image_residues(img: RasterImage, cfg: DenoiseConfig | None = None, window=None) -> CfaStack:
    """Crop, split into CFA planes, zero-mean each and extract its residue.

    ``window`` is ``(offset_x, offset_y, w, h)`` or None for the full frame.
    """
    cfg = cfg or DenoiseConfig()
    if window is not None:
        img = crop(img, *window)
    stack = split_cfa(img)
    return stack.map(lambda p: extract_residue(zero_mean(p), cfg).residue)


class _RunningMean:
    """Streaming element-wise mean over CFA stacks, so references never hold N frames."""

    def __init__(self):
        self.total = None
        self.count = 0
        self.layout = None

    def add(self, stack: CfaStack):
        if self.total is None:
            self.total = {k: np.zeros(stack.shape) for k in CFA_LABELS}
            self.layout = stack.layout
        elif stack.shape != next(iter(self.total.values())).shape:
            raise ValidationError(f"residue stack shape {stack.shape} differs from earlier stacks")
        for k in CFA_LABELS:
            self.total[k] += stack[k]
        self.count += 1

    def result(self) -> CfaStack:
        if not self.count:
            raise ProtocolError("cannot build a reference from an empty list of residues")
        return CfaStack({k: v / self.count for k, v in self.total.items()}, self.layout)


def build_reference(residues, camera_id: str = "", lens_id: str = "", config_hash: str = "") -> ReferencePattern:
    """Frame-average residue stacks into a reference pattern."""
    acc = _RunningMean()
    for r in residues:
        acc.add(r)
    return ReferencePattern(acc.result(), acc.count, camera_id, lens_id, config_hash)


def correlate(x, y) -> float:
    """Pearson correlation of two equally sized arrays, flattened."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"cannot correlate arrays of {x.size} and {y.size} elements")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = np.sqrt(np.dot(xc, xc))
    ny = np.sqrt(np.dot(yc, yc))
    if nx == 0 or ny == 0:
        raise DegenerateInputError("correlation of a constant array is undefined")
    return float(np.clip(np.dot(xc, yc) / (nx * ny), -1.0, 1.0))


def match(ref: ReferencePattern, iut: CfaStack, image_id: str = "") -> MatchScore:
    if ref.planes.shape != iut.shape:
        raise ValidationError(f"reference planes {ref.planes.shape} vs image planes {iut.shape}")
    per_plane = {}
    for k in CFA_LABELS:
        try:
            per_plane[k] = correlate(ref.planes[k], iut[k])
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"plane {k}: {exc}", plane=k) from exc
    return MatchScore(per_plane, image_id, ref.ref_id)


@dataclass
class ScoreTable:
    """Rows of the cross-product score matrix, one per (reference, image)."""

    rows: list = field(default_factory=list)

    def add(self, camera_id: str, lens_id: str, score: MatchScore):
        row = {"camera_id": camera_id, "lens_id": lens_id, "ref_id": score.ref_id, "image_id": score.image_id}
        for k in CFA_LABELS:
            row[f"corr_{k}"] = score.per_plane[k]
        row["corr_mean"] = score.value
        self.rows.append(row)

    def sorted(self) -> "ScoreTable":
        return ScoreTable(sorted(self.rows, key=lambda r: (r["ref_id"], r["camera_id"], r["lens_id"], r["image_id"])))

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in self.sorted().rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(float(r[c])) for c in SCORE_COLUMNS])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def read(cls, path) -> "ScoreTable":
        with open(path, newline="") as fh:
            rows = []
            for r in csv.DictReader(fh):
                for c in SCORE_COLUMNS[4:]:
                    r[c] = float(r[c])
                rows.append(r)
        return cls(rows)


def batch_match(refs, images, cfg: DenoiseConfig | None = None, window=None, residue_fn=None) -> ScoreTable:
    """Correlate every image against every reference.

    ``images`` is an iterable of ``(image_id, path_or_RasterImage)``. Each
    image's residue is computed once and matched against all references.
    ``residue_fn`` overrides how a RasterImage becomes a residue stack (the
    harness uses it to insert dark-frame subtraction).
    """
    from .raster import load_raw

    refs = list(refs)
    images = list(images)
    missing = [str(src) for _, src in images if not isinstance(src, RasterImage) and not Path(src).exists()]
    if missing:
        raise IngestionError(f"missing image files: {', '.join(missing)}", path=missing[0])
    table = ScoreTable()
    for image_id, src in images:
        img = src if isinstance(src, RasterImage) else load_raw(src)
        stack = residue_fn(img) if residue_fn else image_residues(img, cfg, window)
        for ref in refs:
            table.add(img.meta.camera_id, img.meta.lens_id, match(ref, stack, image_id))
    return table
