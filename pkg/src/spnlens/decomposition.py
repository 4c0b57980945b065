"""Correlation-energy decomposition into PRNU, dark-current and lens terms.

Mean matched correlations from four capture conditions (lens or pinhole,
with or without dark-frame removal) are read as additive energies on a
correlation scale whose total power is 1:

    lens, dark present      = SPN + LOS
    pinhole, dark present   = SPN
    lens, dark removed      = PRNU + LOS
    pinhole, dark removed   = PRNU
    SPN                     = PRNU + FPN
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import GroupingError, ValidationError

LOS_TOLERANCE = 0.002


@dataclass(frozen=True)
class ConditionMeans:
    lens_with_dark: float
    pinhole_with_dark: float
    lens_no_dark: float
    pinhole_no_dark: float

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and -1.0 <= v <= 1.0):
                raise ValidationError(f"{name}={v} is not a correlation in [-1, 1]")
        if self.lens_with_dark < self.pinhole_with_dark or self.lens_no_dark < self.pinhole_no_dark:
            warnings.warn("lens condition correlates below the pinhole condition", RuntimeWarning, stacklevel=3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionMeans":
        return cls(*(float(d[k]) for k in ("lens_with_dark", "pinhole_with_dark", "lens_no_dark", "pinhole_no_dark")))

    @classmethod
    def load(cls, path) -> "ConditionMeans":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EnergyDecomposition:
    spn: float
    prnu: float
    fpn: float
    los: float
    extended_fingerprint: float
    residual_uncorrelated: float
    los_check: float
    los_delta: float
    consistent: bool

    def to_dict(self) -> dict:
        return asdict(self)


def solve(means: ConditionMeans, los_tolerance: float = LOS_TOLERANCE) -> EnergyDecomposition:
    spn = means.pinhole_with_dark
    los = means.lens_with_dark - means.pinhole_with_dark
    prnu = means.pinhole_no_dark
    los_check = means.lens_no_dark - means.pinhole_no_dark
    fpn = spn - prnu
    ext = spn + los
    delta = abs(los - los_check)
    if fpn < 0:
        warnings.warn(f"negative dark-current energy {fpn:.4g}", RuntimeWarning, stacklevel=2)
    if los < 0:
        warnings.warn(f"negative lens energy {los:.4g}", RuntimeWarning, stacklevel=2)
    consistent = delta <= los_tolerance
    if not consistent:
        warnings.warn(f"lens estimates disagree: {los:.4g} vs {los_check:.4g}", RuntimeWarning, stacklevel=2)
    return EnergyDecomposition(spn, prnu, fpn, los, ext, 1.0 - ext, los_check, delta, consistent)


def snp_db(ratio: float) -> float:
    """``10 log10(ratio)``; non-positive ratios map to ``-inf``."""
    return 10.0 * math.log10(ratio) if ratio > 0 else -math.inf


@dataclass(frozen=True)
class SnpEntry:
    ratio: float
    db: float


@dataclass(frozen=True)
class SnpTable:
    entries: dict
    shares: dict

    def percent(self, name: str) -> float:
        return 100.0 * self.entries[name].ratio

    def rows(self):
        for name, e in self.entries.items():
            yield name, e.ratio, e.db, self.shares.get(name)


IDENTIFIERS = ("PRNU", "FPN", "LOS", "SPN", "SPN+LOS", "residual")


def snp_table(d: EnergyDecomposition) -> SnpTable:
    raw = {
        "PRNU": d.prnu,
        "FPN": d.fpn,
        "LOS": d.los,
        "SPN": d.spn,
        "SPN+LOS": d.extended_fingerprint,
        "residual": d.residual_uncorrelated,
    }
    entries = {}
    for name in IDENTIFIERS:
        r = max(raw[name], 0.0)
        entries[name] = SnpEntry(r, snp_db(r))
    ext = d.prnu + d.fpn + d.los
    shares = {k: (raw[k] / ext if ext else math.nan) for k in ("PRNU", "FPN", "LOS")}
    return SnpTable(entries, shares)


# --------------------------------------------------------------------------
# reports


def report_csv(d: EnergyDecomposition, table: SnpTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in d.to_dict().items():
        w.writerow([k, repr(v) if isinstance(v, float) else v])
    w.writerow([])
    w.writerow(["identifier", "ratio", "snp_db", "share_of_extended"])
    for name, ratio, db, share in table.rows():
        w.writerow([name, repr(ratio), repr(db), "" if share is None else repr(share)])
    return buf.getvalue()


def report_text(d: EnergyDecomposition, table: SnpTable) -> str:
    lines = ["energy decomposition (correlation scale, total power = 1)"]
    for k, v in d.to_dict().items():
        lines.append(f"  {k:<22} {v:>10.4f}" if isinstance(v, float) else f"  {k:<22} {v!s:>10}")
    lines.append("")
    lines.append(f"  {'identifier':<10} {'% power':>9} {'SNP dB':>9} {'% of ext.':>10}")
    for name, ratio, db, share in table.rows():
        s = "" if share is None else f"{100 * share:10.2f}"
        lines.append(f"  {name:<10} {100 * ratio:9.2f} {db:9.2f} {s:>10}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# box statistics


@dataclass(frozen=True)
class BoxStats:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    mode: float
    range: float
    skew_sign: int

    def to_dict(self) -> dict:
        return asdict(self)


def _hinges(sorted_vals: np.ndarray) -> tuple[float, float]:
    # Tukey hinges: the median is shared by both halves when n is odd
    n = sorted_vals.size
    half = (n + 1) // 2
    return float(np.median(sorted_vals[:half])), float(np.median(sorted_vals[n - half:]))


def summarize(values) -> BoxStats:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise GroupingError("box statistics of an empty group")
    q1, q3 = _hinges(v)
    rounded, counts = np.unique(np.round(v, 3), return_counts=True)
    mode = float(rounded[np.argmax(counts)])
    if v.size < 3 or v[0] == v[-1]:
        sign = 0
    else:
        # third moment of range-normalised values; stays finite for tiny spreads
        z = (v - v.mean()) / (v[-1] - v[0])
        m3 = float(np.mean(z ** 3))
        sign = 0 if abs(m3) < 1e-12 else int(np.sign(m3))
    return BoxStats(int(v.size), float(v[0]), q1, float(np.median(v)), q3, float(v[-1]),
                    float(v.mean()), mode, float(v[-1] - v[0]), sign)


BOX_COLUMNS = ("count", "minimum", "q1", "median", "q3", "maximum", "mean", "mode", "range", "skew_sign")


def box_stats(rows, keys=("ref_id", "camera_id", "lens_id"), value="corr_mean") -> dict:
    """Group score rows by ``keys`` and summarise ``value`` within each group."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    if not groups:
        raise GroupingError("no rows to group")
    return {g: summarize(vals) for g, vals in sorted(groups.items())}


def box_stats_csv(groups: dict, keys=("ref_id", "camera_id", "lens_id")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(keys) + list(BOX_COLUMNS))
    for g, s in groups.items():
        d = s.to_dict()
        w.writerow(list(g) + [repr(d[c]) if isinstance(d[c], float) else d[c] for c in BOX_COLUMNS])
    return buf.getvalue()
