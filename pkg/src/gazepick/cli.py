"""Command-line driver: run, gen, bench, viz, calib-check."""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import cv2

from gazepick.core import ConfigError, GazePickError, PipelineConfig, config_with, load_config
from gazepick.features import ImageError, detect, load_image
from gazepick.geometry import CalibrationError, load_calibration, round_trip_error
from gazepick.matching import match_and_filter

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_USAGE = 64
EXIT_IO = 74

CALIB_TOL_PX = 1e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", type=float, help="Lowe ratio (0, 1]")
    p.add_argument("--min-matches", type=int, help="matches required before a message is sent")
    p.add_argument("--cutout-scale", type=float, help="pictogram box enlargement factor (>= 1)")
    p.add_argument("--detector", choices=["orb", "akaze"], type=str.lower)
    p.add_argument("--matcher", choices=["bf", "approx"], type=str.lower)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="key=value config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazepick", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="replay scenario directories and write metrics")
    run.add_argument("scenarios", nargs="+", type=Path)
    run.add_argument("--out", type=Path, help="output directory (default: <scenario>/results)")
    run.add_argument("--jobs", type=int, default=1, help="scenarios replayed in parallel")
    _add_config_flags(run)

    gen = sub.add_parser("gen", help="generate a synthetic scenario directory")
    gen.add_argument("kind", help="case1 | case2 | case3-joint | case3-disjoint")
    gen.add_argument("out_dir", nargs="?", type=Path)
    gen.add_argument("--out", type=Path, dest="out_flag")
    gen.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="detector x matcher benchmark")
    bench.add_argument("corpus", nargs="?", type=Path, help="corpus directory (default: bundled)")
    bench.add_argument("--out", type=Path, default=Path("bench-results"))
    bench.add_argument("--reps", type=int, default=3)
    bench.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; timing runs sequentially")
    _add_config_flags(bench)

    viz = sub.add_parser("viz", help="draw filtered matches between two images")
    viz.add_argument("query", type=Path)
    viz.add_argument("train", type=Path)
    viz.add_argument("--out", type=Path, default=Path("matches.png"))
    _add_config_flags(viz)

    calib = sub.add_parser("calib-check", help="validate a calibration file")
    calib.add_argument("calib_file", type=Path)
    return parser


def _config(args) -> PipelineConfig:
    base = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {
        "ratio": args.ratio,
        "min_matches": args.min_matches,
        "cutout_scale": args.cutout_scale,
        "detector": args.detector,
        "matcher": args.matcher,
        "seed": args.seed,
    }
    return config_with(base, overrides)


def _run_one(scenario_dir: Path, out_dir: Path, cfg: PipelineConfig):
    from gazepick.harness import load_scenario, run_scenario, write_run

    s = load_scenario(scenario_dir)
    metrics, records = run_scenario(s, cfg)
    write_run(out_dir, metrics, records)
    return metrics


def cmd_run(args) -> int:
    from gazepick.harness import write_metrics

    cfg = _config(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    for d in args.scenarios:
        if not d.is_dir():
            raise FileNotFoundError(f"scenario directory {d} does not exist")
    if len(args.scenarios) == 1:
        outs = [args.out or args.scenarios[0] / "results"]
    else:
        root = args.out or Path("results")
        outs = [root / d.name for d in args.scenarios]
    if args.jobs > 1 and len(args.scenarios) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            metrics = list(pool.map(_run_one, args.scenarios, outs, [cfg] * len(outs)))
    else:
        metrics = [_run_one(d, o, cfg) for d, o in zip(args.scenarios, outs)]
    if len(metrics) > 1:
        write_metrics(metrics, args.out or Path("results"))
    for m in metrics:
        d = m.to_dict()
        print(f"{m.name}: measurements={m.total_measurements} sent={m.messages_sent} "
              f"sent_rate={d['task_sent_rate']} success_rate={d['task_selection_success_rate']}")
    return EXIT_OK


def cmd_gen(args) -> int:
    from gazepick.harness import CaseKind, generate_su_case, save_scenario

    try:
        kind = CaseKind.parse(args.kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out_dir or args.out_flag
    if out is None:
        raise UsageError("gen needs an output directory")
    path = save_scenario(generate_su_case(kind, args.seed), out)
    print(f"wrote {kind.value} (seed {args.seed}) to {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from gazepick.harness.bench import bench_detectors, bundled_corpus, write_bench

    cfg = _config(args)
    rows = bench_detectors(args.corpus or bundled_corpus(), cfg=cfg, reps=args.reps)
    path = write_bench(rows, args.out)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_viz(args) -> int:
    from gazepick.harness.viz import render_matches

    cfg = _config(args)
    a, b = load_image(args.query, gray=False), load_image(args.train, gray=False)
    fa, fb = detect(a, cfg.detector), detect(b, cfg.detector)
    matches = match_and_filter(fa, fb, cfg)
    img = render_matches(a, b, fa, fb, matches)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(args.out), img):
        raise OSError(f"cannot write {args.out}")
    print(f"{len(matches)} matches -> {args.out}")
    return EXIT_OK


def cmd_calib_check(args) -> int:
    if not args.calib_file.exists():
        raise FileNotFoundError(f"{args.calib_file} does not exist")
    rig = load_calibration(args.calib_file)
    err = round_trip_error(rig)
    report = {"file": str(args.calib_file), "depth_scale": rig.depth_scale, "max_round_trip_error_px": err}
    print(json.dumps(report))
    if err >= CALIB_TOL_PX:
        print(f"round-trip error {err:.3g} px exceeds {CALIB_TOL_PX:g} px", file=sys.stderr)
        return EXIT_SCENARIO
    return EXIT_OK


COMMANDS = {"run": cmd_run, "gen": cmd_gen, "bench": cmd_bench, "viz": cmd_viz, "calib-check": cmd_calib_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        # an optional positional placed after flags is left over by argparse
        if args.command == "gen" and args.out_dir is None and len(extra) == 1 and not extra[0].startswith("-"):
            args.out_dir, extra = Path(extra[0]), []
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gazepick: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"gazepick: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, ImageError) as exc:
        print(f"gazepick: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CalibrationError, GazePickError, ValueError) as exc:
        print(f"gazepick: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except OSError as exc:
        print(f"gazepick: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
