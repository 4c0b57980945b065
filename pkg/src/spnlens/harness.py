"""End-to-end protocol: split frames, build references, match, decompose, report.

Every light frame is processed along two paths: ``raw`` (dark current left in)
and ``dark_corrected`` (camera dark frame subtracted first). Each path gets its
own references and score table; the decomposition reads lens and pinhole
matched means from both.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .darkframe import build_dark_frame, subtract_dark
from .decomposition import (
    ConditionMeans,
    box_stats,
    box_stats_csv,
    report_csv,
    report_text,
    snp_table,
    solve,
)
from .denoise import DenoiseConfig
from .errors import IngestionError, ProtocolError, SpnError, StageError
from .fingerprint import ScoreTable, build_reference, correlate, image_residues, match
from .raster import CFA_LABELS, PINHOLE, load_raw
from .simulator import load_manifest

log = logging.getLogger(__name__)

RAW, CORRECTED = "raw", "dark_corrected"


@dataclass
class Combination:
    camera_id: str
    lens_id: str
    reference: list
    test: list

    @property
    def ref_id(self) -> str:
        return f"{self.camera_id}_{self.lens_id}"


@dataclass
class RunManifest:
    dataset: str
    split_seed: int
    reference_count: int
    combinations: list
    darks: dict = field(default_factory=dict)
    heldout_darks: dict = field(default_factory=dict)
    config: dict = field(default_factory=lambda: DenoiseConfig().to_dict())
    window: list | None = None
    output_dir: str = "run"
    condition_means: dict | None = None

    @property
    def denoise_config(self) -> DenoiseConfig:
        return DenoiseConfig.from_dict(self.config)

    @property
    def config_hash(self) -> str:
        return self.denoise_config.hash

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config_hash"] = self.config_hash
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        d.pop("config_hash", None)
        d["combinations"] = [Combination(**c) for c in d["combinations"]]
        return cls(**d)


def _split_rng(seed: int, camera_id: str, lens_id: str) -> np.random.Generator:
    key = zlib.crc32(f"{camera_id}|{lens_id}".encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def plan_run(manifest, split_seed: int = 0, counts=(50, 100), output_dir="run",
             config: DenoiseConfig | None = None, window=None) -> RunManifest:
    """Split each (camera, lens) frame set into reference and test frames.

    ``counts`` is ``(n_reference, n_test)``; ``n_test`` may be None for "all
    the rest". Reference and test sets always partition the combination.
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    root = Path(manifest.get("_root", "."))
    n_ref, n_test = counts
    if n_ref < 1:
        raise ProtocolError("reference count must be >= 1")

    groups: dict = {}
    darks: dict = {}
    heldout: dict = {}
    for f in manifest["frames"]:
        path = str(root / f["path"])
        if f["kind"] == "light":
            groups.setdefault((f["camera_id"], f["lens_id"]), []).append(path)
        elif f["kind"] == "dark":
            darks.setdefault(f["camera_id"], []).append(path)
        elif f["kind"] == "heldout_dark":
            heldout.setdefault(f["camera_id"], []).append(path)

    combos = []
    for (cam, lens), paths in sorted(groups.items()):
        paths = sorted(paths)
        if len(paths) < n_ref + 1:
            raise ProtocolError(f"{cam}/{lens}: {len(paths)} frames, need at least {n_ref + 1}")
        if n_test is not None and n_ref + n_test != len(paths):
            raise ProtocolError(f"{cam}/{lens}: counts {n_ref}+{n_test} do not partition {len(paths)} frames")
        order = _split_rng(split_seed, cam, lens).permutation(len(paths))
        ref = sorted(paths[i] for i in order[:n_ref])
        test = sorted(paths[i] for i in order[n_ref:])
        combos.append(Combination(cam, lens, ref, test))
    if not combos:
        raise ProtocolError("dataset has no light frames")
    return RunManifest(
        dataset=str(root), split_seed=int(split_seed), reference_count=n_ref, combinations=combos,
        darks={k: sorted(v) for k, v in sorted(darks.items())},
        heldout_darks={k: sorted(v) for k, v in sorted(heldout.items())},
        config=(config or DenoiseConfig()).to_dict(), window=list(window) if window else None,
        output_dir=str(output_dir),
    )


def _image_id(path: str) -> str:
    return Path(path).stem


def _load(path: str):
    if not Path(path).exists():
        raise IngestionError(f"missing frame {path}", path=path)
    return load_raw(path)


class _Stage:
    def __init__(self, name):
        self.name = name
        self.item = ""

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (SpnError, OSError, KeyError, ValueError)) and not isinstance(exc, StageError):
            raise StageError(self.name, self.item, exc) from exc
        return False


def _matched_means(table: ScoreTable, ref_index: dict) -> dict:
    """Mean corr per (ref camera, ref lens, image camera, image lens)."""
    groups: dict = {}
    for r in table.rows:
        rc, rl = ref_index[r["ref_id"]]
        groups.setdefault((rc, rl, r["camera_id"], r["lens_id"]), []).append(r["corr_mean"])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def _condition(group_means: dict, camera=None, pinhole=False):
    vals = [m for (rc, rl, ic, il), m in group_means.items()
            if rc == ic and rl == il and (rl == PINHOLE) == pinhole and (camera is None or rc == camera)]
    return float(np.mean(vals)) if vals else None


def execute_run(plan: RunManifest, output_dir=None) -> dict:
    """Run every stage of ``plan`` and write artifacts under ``output_dir``.

    Returns the report dict (also written as ``report.json``).
    """
    out = Path(output_dir or plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = plan.denoise_config
    window = tuple(plan.window) if plan.window else None
    cameras = sorted({c.camera_id for c in plan.combinations})

    with _Stage("dark") as st:
        dark_frames = {}
        for cam in cameras:
            paths = plan.darks.get(cam)
            if not paths:
                continue
            st.item = cam
            dark = build_dark_frame(_load(p) for p in paths)
            dark.save(out / "darks" / dark.filename)
            dark_frames[cam] = dark
    paths_run = [RAW] + ([CORRECTED] if dark_frames and all(c in dark_frames for c in cameras) else [])

    def residues(img, path):
        if path == CORRECTED:
            img = subtract_dark(img, dark_frames[img.meta.camera_id])
        return image_residues(img, cfg, window)

    with _Stage("reference") as st:
        refs = {p: [] for p in paths_run}
        for combo in plan.combinations:
            st.item = combo.ref_id
            stacks = {p: [] for p in paths_run}
            for f in combo.reference:
                st.item = f
                img = _load(f)
                for p in paths_run:
                    stacks[p].append(residues(img, p))
            for p in paths_run:
                ref = build_reference(stacks[p], combo.camera_id, combo.lens_id, cfg.hash)
                ref.save(out / "refs" / p / f"{ref.ref_id}.ref")
                refs[p].append(ref)
            del stacks

    ref_index = {c.ref_id: (c.camera_id, c.lens_id) for c in plan.combinations}
    with _Stage("match") as st:
        tables = {p: ScoreTable() for p in paths_run}
        for combo in plan.combinations:
            for f in combo.test:
                st.item = f
                img = _load(f)
                for p in paths_run:
                    stack = residues(img, p)
                    for ref in refs[p]:
                        tables[p].add(img.meta.camera_id, img.meta.lens_id, match(ref, stack, _image_id(f)))
        for p, t in tables.items():
            t.write(out / f"scores_{p}.csv")

    with _Stage("box-stats"):
        for p, t in tables.items():
            groups = box_stats(t.rows)
            (out / f"box_stats_{p}.csv").write_text(box_stats_csv(groups))

    report: dict = {"config_hash": cfg.hash, "paths": paths_run, "group_means": {}, "per_camera": {}}
    group_means = {p: _matched_means(tables[p], ref_index) for p in paths_run}
    for p, gm in group_means.items():
        report["group_means"][p] = [
            {"ref_camera": k[0], "ref_lens": k[1], "image_camera": k[2], "image_lens": k[3], "mean": v}
            for k, v in gm.items()
        ]
        matched = [v for k, v in gm.items() if k[0] == k[2]]
        mismatched = [v for k, v in gm.items() if k[0] != k[2]]
        report.setdefault("separation", {})[p] = {
            "min_matched": min(matched) if matched else None,
            "max_mismatched": max(mismatched) if mismatched else None,
        }
        for cam in cameras:
            report["per_camera"].setdefault(cam, {})[p] = {
                "lens": _condition(gm, cam, pinhole=False),
                "pinhole": _condition(gm, cam, pinhole=True),
            }

    with _Stage("fpn-trace") as st:
        # residual dark-current pattern left in each path's pinhole references,
        # measured against references built from held-out dark captures
        traces = {p: [] for p in paths_run}
        for cam in cameras:
            hp = plan.heldout_darks.get(cam)
            pin = [r for r in refs[RAW] if r.camera_id == cam and r.lens_id == PINHOLE]
            if not hp or not pin:
                continue
            st.item = cam
            dark_ref = build_reference(image_residues(_load(f), cfg, window) for f in hp)
            for p in paths_run:
                ref = next(r for r in refs[p] if r.camera_id == cam and r.lens_id == PINHOLE)
                traces[p].append(np.mean([correlate(ref.planes[k], dark_ref.planes[k]) for k in CFA_LABELS]))
        report["fpn_trace"] = {p: (float(np.mean(v)) if v else None) for p, v in traces.items()}

    with _Stage("decompose"):
        means = None
        if plan.condition_means is not None:
            means = ConditionMeans.from_dict(plan.condition_means)
        elif CORRECTED in paths_run:
            vals = [_condition(group_means[RAW], pinhole=False), _condition(group_means[RAW], pinhole=True),
                    _condition(group_means[CORRECTED], pinhole=False), _condition(group_means[CORRECTED], pinhole=True)]
            if None not in vals:
                means = ConditionMeans(*vals)
        if means is None:
            report["decomposition"] = None
            report["notice"] = "insufficient conditions: need lens and pinhole sets with and without dark correction"
            log.warning(report["notice"])
        else:
            report.update(decomposition_report(means, out))

    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def decomposition_report(means: ConditionMeans, out_dir=None) -> dict:
    d = solve(means)
    table = snp_table(d)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "decomposition.csv").write_text(report_csv(d, table))
        (out_dir / "decomposition.txt").write_text(report_text(d, table))
    return {
        "condition_means": means.to_dict(),
        "decomposition": d.to_dict(),
        "snp": {name: {"ratio": e.ratio, "db": e.db} for name, e in table.entries.items()},
        "shares": table.shares,
    }
