"""Command-line entry point: ``spnlens <subcommand>`` or ``python -m spnlens``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .container import read_container, write_container
from .darkframe import DarkFrame, build_dark_frame, subtract_dark
from .decomposition import ConditionMeans, box_stats, box_stats_csv
from .denoise import DenoiseConfig
from .errors import SpnError, StageError
from .fingerprint import ReferencePattern, ScoreTable, batch_match, build_reference, image_residues
from .harness import RunManifest, decomposition_report, execute_run, plan_run
from .raster import CFA_LABELS, CfaStack, load_raw
from .simulator import render_dataset


def _config(path) -> DenoiseConfig:
    return DenoiseConfig.from_dict(json.loads(Path(path).read_text())) if path else DenoiseConfig()


def _residue_fn(args, cfg):
    dark = DarkFrame.load(args.dark) if getattr(args, "dark", None) else None
    window = tuple(args.window) if getattr(args, "window", None) else None

    def fn(img):
        if dark is not None:
            img = subtract_dark(img, dark)
        return image_residues(img, cfg, window)

    return fn


def _stack_from(path, fn) -> CfaStack:
    if str(path).endswith(".res"):
        _, planes, _, prov = read_container(path, expect="residue")
        return CfaStack(planes, prov.get("layout", "RGGB"))
    return fn(load_raw(path))


def cmd_simulate(args):
    scenario = json.loads(Path(args.scenario).read_text())
    m = render_dataset(scenario, args.out)
    print(f"wrote {len(m['frames'])} frames to {args.out}")


def cmd_residue(args):
    cfg = _config(args.config)
    img = load_raw(args.frame)
    stack = _residue_fn(args, cfg)(img)
    out = args.out or str(Path(args.frame).with_suffix(".res"))
    prov = {"layout": stack.layout, "meta": img.meta.to_dict(), "source": str(args.frame)}
    write_container(out, "residue", {k: stack[k] for k in CFA_LABELS}, cfg.hash, prov)
    print(out)


def cmd_build_ref(args):
    cfg = _config(args.config)
    fn = _residue_fn(args, cfg)
    ref = build_reference((_stack_from(p, fn) for p in args.frames), args.camera, args.lens, cfg.hash)
    out = args.out or f"{ref.ref_id}.ref"
    ref.save(out)
    print(out)


def cmd_build_dark(args):
    dark = build_dark_frame(load_raw(p) for p in args.frames)
    out = args.out or dark.filename
    dark.save(out)
    print(out)


def cmd_match(args):
    cfg = _config(args.config)
    refs = [ReferencePattern.load(p) for p in args.ref]
    images = [(Path(p).stem, p) for p in args.frames]
    table = batch_match(refs, images, residue_fn=_residue_fn(args, cfg))
    if args.out:
        table.write(args.out)
    else:
        sys.stdout.write(table.to_csv())


def cmd_box_stats(args):
    groups = box_stats(ScoreTable.read(args.scores).rows)
    text = box_stats_csv(groups)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_decompose(args):
    if args.means:
        means = ConditionMeans.load(args.means)
    else:
        means = ConditionMeans(*args.values)
    report = decomposition_report(means, args.out)
    if args.out:
        print((Path(args.out) / "decomposition.txt").read_text(), end="")
    else:
        print(json.dumps(report, indent=1))
    if args.box_stats:
        text = box_stats_csv(box_stats(ScoreTable.read(args.box_stats).rows))
        if args.out:
            (Path(args.out) / "box_stats.csv").write_text(text)
        else:
            sys.stdout.write(text)


def cmd_plan(args):
    cfg = _config(args.config)
    plan = plan_run(args.dataset, args.seed, (args.counts[0], args.counts[1] if args.counts[1] >= 0 else None),
                    args.run_dir, cfg, args.window)
    if args.means:
        plan.condition_means = ConditionMeans.load(args.means).to_dict()
    plan.save(args.out)
    print(args.out)


def cmd_run(args):
    plan = RunManifest.load(args.plan)
    if args.config:
        plan.config = _config(args.config).to_dict()
    report = execute_run(plan, args.out)
    if report.get("decomposition") is None:
        print(report["notice"])
    else:
        out = Path(args.out or plan.output_dir)
        print((out / "decomposition.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spnlens", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON file with DenoiseConfig fields")
        return sp

    def with_residue_opts(sp):
        with_config(sp)
        sp.add_argument("--dark", help=".dark file to subtract first")
        sp.add_argument("--window", type=int, nargs=4, metavar=("X", "Y", "W", "H"), help="crop window")
        return sp

    s = sub.add_parser("simulate", help="render a synthetic dataset from a scenario file")
    s.add_argument("scenario")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = with_residue_opts(sub.add_parser("residue", help="extract the CFA noise residue of one frame"))
    s.add_argument("frame")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_residue)

    s = with_residue_opts(sub.add_parser("build-ref", help="frame-average residues into a reference pattern"))
    s.add_argument("frames", nargs="+", help=".raw frames or .res residues")
    s.add_argument("--camera", default="")
    s.add_argument("--lens", default="")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_build_ref)

    s = sub.add_parser("build-dark", help="average dark captures into a .dark file")
    s.add_argument("frames", nargs="+")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_build_dark)

    s = with_residue_opts(sub.add_parser("match", help="score frames against references (CSV)"))
    s.add_argument("--ref", nargs="+", required=True)
    s.add_argument("--frames", nargs="+", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_match)

    s = sub.add_parser("box-stats", help="per-group box statistics of a score CSV")
    s.add_argument("scores")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_box_stats)

    s = sub.add_parser("decompose", help="solve the energy decomposition from condition means")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--means", help="JSON file with the four condition means")
    g.add_argument("--values", type=float, nargs=4,
                   metavar=("LENS_DARK", "PINHOLE_DARK", "LENS_NODARK", "PINHOLE_NODARK"))
    s.add_argument("--box-stats", help="score CSV to summarise alongside")
    s.add_argument("--out", help="directory for decomposition.csv / .txt")
    s.set_defaults(fn=cmd_decompose)

    s = with_config(sub.add_parser("plan", help="split a dataset into reference/test sets"))
    s.add_argument("dataset", help="dataset directory or manifest.json")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--counts", type=int, nargs=2, default=(50, 100), metavar=("N_REF", "N_TEST"),
                   help="N_TEST of -1 means all remaining frames")
    s.add_argument("--window", type=int, nargs=4, metavar=("X", "Y", "W", "H"))
    s.add_argument("--means", help="pre-measured condition means to decompose instead")
    s.add_argument("--run-dir", default="run")
    s.add_argument("--out", default="plan.json")
    s.set_defaults(fn=cmd_plan)

    s = with_config(sub.add_parser("run", help="execute a plan end to end"))
    s.add_argument("plan")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpnError, OSError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
