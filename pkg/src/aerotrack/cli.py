"""Command-line entry point.

Subcommands: ``calibrate``, ``build-prior``, ``reconstruct``, ``analyze``,
``synth`` and ``score``. Exit status is 0 on success, 1 for configuration
errors, 2 for data errors and 3 for anything else.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._io import atomic_write_text, dumps, dumps_lines
from .exceptions import AerotrackError, ConfigError, DataError, PreconditionError, QueryError

log = logging.getLogger("aerotrack")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class JsonFormatter(logging.Formatter):
    """One JSON object per record, without wall-clock fields so runs diff cleanly."""

    def format(self, record):
        d = {"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()}
        extra = getattr(record, "fields", None)
        if extra:
            d.update(extra)
        return dumps(d)


def _setup_logging(level, fmt):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if fmt == "json" else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("aerotrack")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _emit(event, **fields):
    log.info(event, extra={"fields": {"event": event, **fields}})


# ------------------------------------------------------------- commands


def cmd_calibrate(args):
    from .camera import load_calibration, load_reference_tracks, recalibrate_sequence
    from .pipeline import build_reference_set

    calib = load_calibration(args.calibration)
    anchor = calib.solve_anchor_pose()
    _emit("anchor_pose", rms_px=anchor.rms_error, n_correspondences=len(calib.correspondences))
    poses = {calib.anchor_frame: anchor}
    if args.reference_tracks:
        ids, tracks = load_reference_tracks(args.reference_tracks)
        ref = build_reference_set(calib, anchor, ids, tracks)
        poses = recalibrate_sequence(ref, sorted(tracks), calib.intrinsics, calib.reprojection_threshold)
    n_degraded = sum(p.degraded for p in poses.values())
    _emit("recalibrated", n_frames=len(poses), n_degraded=n_degraded)
    if args.output:
        atomic_write_text(args.output, dumps_lines({"frame_index": int(f), **p.to_dict()} for f, p in sorted(poses.items())))
    return EXIT_OK


def cmd_build_prior(args):
    from .fleet import load_models, save_models, synthetic_fleet
    from .shape_prior import prior_from_fleet

    if args.models:
        models = load_models(args.models)
    else:
        models = synthetic_fleet(args.synthetic, args.fleet_seed)
        if args.models_out:
            save_models(models, args.models_out)
    prior = prior_from_fleet(models, k=args.components, n_neighbors=args.neighbors)
    prior.save(args.output)
    _emit(
        "prior_built",
        n_models=len(models),
        k=prior.k,
        explained_variance_ratio=[float(v) for v in prior.explained_variance_ratio_],
        residual=prior.residual_,
    )
    return EXIT_OK


def _apply_overrides(config, args):
    updates = {}
    for key in ("detections", "reference_tracks", "calibration", "map", "prior", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = str(Path(value).resolve())
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.frame_rate is not None:
        updates["frame_rate"] = args.frame_rate
    if args.lam is not None:
        updates["fit"] = replace(config.fit, lam=args.lam)
    assoc = {}
    if args.iou_threshold is not None:
        assoc["iou_threshold"] = args.iou_threshold
    if args.min_hits is not None:
        assoc["min_hits"] = args.min_hits
    if args.max_misses is not None:
        assoc["max_misses"] = args.max_misses
    if args.no_map_gate:
        assoc["map_gate"] = False
    if assoc:
        updates["association"] = replace(config.association, **assoc)
    if args.no_map:
        updates["map"] = None
    return replace(config, **updates) if updates else config


def cmd_reconstruct(args):
    from .pipeline import load_pipeline_config, run_reconstruct

    config = _apply_overrides(load_pipeline_config(args.config), args)
    result = run_reconstruct(config)
    _emit("reconstructed", **{k: v for k, v in result.diagnostics[-1].items() if k != "event"}, outputs=result.outputs)
    return EXIT_OK


def _parse_pattern(text):
    """``"A,B|C,D"`` -> ``["A", {"B", "C"}, "D"]``."""
    out = []
    for part in text.split(","):
        alts = [p.strip() for p in part.split("|") if p.strip()]
        if not alts:
            raise ConfigError(f"empty element in pattern {text!r}")
        out.append(alts[0] if len(alts) == 1 else alts)
    return out


def cmd_analyze(args):
    from . import analytics as an
    from .semantic_map import load_map

    dataset = an.load_trajectories(args.trajectories)
    smap = load_map(args.map)
    outdir = Path(args.output_dir) if args.output_dir else None
    by_id = {tr.track_id: tr for tr in dataset}

    def write(name, text):
        if outdir is None:
            sys.stdout.write(text)
        else:
            atomic_write_text(outdir / name, text)

    def track(tid):
        if tid not in by_id:
            raise QueryError(f"no trajectory with track id {tid}")
        return by_id[tid]

    did_something = False
    if args.count:
        q = an.CountQuery(_parse_pattern(args.count), tuple(args.group_by or ()), args.split_by)
        res = an.count_patterns(dataset, smap, q)
        rows = [("/".join(map(str, g)) or "all", s, c, round(p, 2)) for g, s, c, p in res.rows()]
        write("counts.csv", an.table_csv(rows, ("group", "split", "count", "percent")))
        _emit("counted", matched=res.matched, total=res.total)
        did_something = True
    if args.speed_stats:
        stats = an.speed_stats(dataset, smap, args.speed_stats)
        cols = ("segment", "n", "mean", "p15", "p50", "p85", "pct_above_limit")
        rows = [(sid, *(stats[sid].get(c) for c in cols[1:])) for sid in args.speed_stats]
        write("speed_stats.csv", an.table_csv(rows, cols))
        did_something = True
    if args.ttc:
        lead, follow = track(args.ttc[0]), track(args.ttc[1])
        series = an.ttc_series(lead, follow)
        write(f"ttc_{args.ttc[0]}_{args.ttc[1]}.csv", an.table_csv(series, ("t", "ttc", "collision")))
        did_something = True
    if args.pet:
        if not args.zone:
            raise ConfigError("--pet needs --zone")
        if args.zone not in smap:
            raise QueryError(f"unknown zone {args.zone!r}")
        d = an.pet_detail(track(args.pet[0]), track(args.pet[1]), smap[args.zone])
        write(f"pet_{args.pet[0]}_{args.pet[1]}.csv", an.table_csv([(d["pet"], d["first_exit"], d["second_entry"], d["conflict"])], ("pet", "first_exit", "second_entry", "conflict")))
        did_something = True
    if args.incidents:
        try:
            raw = yaml.safe_load(Path(args.incidents).read_text()) or []
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.incidents}: invalid YAML ({exc})") from exc
        if isinstance(raw, dict):
            raw = raw.get("incident_rules", [])
        try:
            rules = [an.IncidentRule(**r) for r in raw]
        except TypeError as exc:
            raise ConfigError(f"{args.incidents}: {exc}") from exc
        incidents = an.detect_incidents(dataset, smap, rules)
        rows = [(i.kind, " ".join(map(str, i.track_ids)), i.t_start, i.t_end, i.peak, i.zone) for i in incidents]
        write("incidents.csv", an.table_csv(rows, ("kind", "track_ids", "t_start", "t_end", "peak", "zone")))
        _emit("incidents", n=len(incidents))
        did_something = True
    if not did_something:
        raise ConfigError("nothing to do: pass --count, --speed-stats, --ttc, --pet or --incidents")
    return EXIT_OK


def cmd_synth(args):
    from .synth import crossing_scenario, generate, intersection_scenario, load_scenario

    if args.scenario in ("intersection", "crossing"):
        build = intersection_scenario if args.scenario == "intersection" else crossing_scenario
        spec = build(pixel_sigma=args.sigma or 0.0)
    else:
        spec = load_scenario(args.scenario)
        if args.sigma is not None:
            spec = replace(spec, pixel_sigma=args.sigma)
    scene = generate(spec, args.seed)
    paths = scene.write(args.output_dir)
    _emit("synthesized", scenario=spec.name, n_frames=len(scene.frames), n_detections=sum(len(f) for f in scene.frames), files=paths)
    return EXIT_OK


def cmd_score(args):
    from .analytics import load_trajectories
    from .evaluation import score
    from .pipeline import run_scenario_suite, write_scorecard
    from .synth import GroundTruth

    if args.scenarios is not None:
        rows = run_scenario_suite(args.scenarios, gate=args.gate)
        if args.output:
            write_scorecard(rows, args.output)
        else:
            sys.stdout.write(dumps(rows) + "\n")
        return EXIT_OK
    if not (args.truth and args.trajectories):
        raise ConfigError("score needs --truth and --trajectories, or --scenarios")
    report = score(GroundTruth.load(args.truth), load_trajectories(args.trajectories), args.gate)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="aerotrack", description="Vehicle trajectory reconstruction from aerial keypoint detections.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    p.add_argument("--log-format", default="json", choices=["json", "text"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="solve the anchor pose and per-frame poses")
    c.add_argument("--calibration", required=True)
    c.add_argument("--reference-tracks")
    c.add_argument("-o", "--output", help="pose file (JSON lines)")
    c.set_defaults(func=cmd_calibrate)

    b = sub.add_parser("build-prior", help="fit the PCA shape prior")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--models", help="annotated model file (JSON)")
    src.add_argument("--synthetic", type=int, metavar="N", help="use N procedurally generated models")
    b.add_argument("--fleet-seed", type=int, default=0)
    b.add_argument("--models-out", help="also write the synthetic models")
    b.add_argument("-k", "--components", type=int, default=5)
    b.add_argument("--neighbors", type=int, default=5)
    b.add_argument("-o", "--output", required=True)
    b.set_defaults(func=cmd_build_prior)

    r = sub.add_parser("reconstruct", help="run the reconstruction pipeline")
    r.add_argument("config", help="pipeline config (YAML)")
    for key in ("detections", "reference-tracks", "calibration", "map", "prior", "output-dir"):
        r.add_argument(f"--{key}")
    r.add_argument("--no-map", action="store_true", help="ignore the map (no gating)")
    r.add_argument("--seed", type=int)
    r.add_argument("--frame-rate", type=float)
    r.add_argument("--lam", type=float, help="shape regularizer weight")
    r.add_argument("--iou-threshold", type=float)
    r.add_argument("--min-hits", type=int)
    r.add_argument("--max-misses", type=int)
    r.add_argument("--no-map-gate", action="store_true")
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("analyze", help="traffic analytics over a trajectory file")
    a.add_argument("--trajectories", required=True)
    a.add_argument("--map", required=True)
    a.add_argument("--count", metavar="PATTERN", help="segment pattern, e.g. 'W_in_1|W_in_2,junction,N_out_1'")
    a.add_argument("--group-by", nargs="*", choices=["entry", "exit", "type"])
    a.add_argument("--split-by", choices=["entry", "exit", "type"])
    a.add_argument("--speed-stats", nargs="+", metavar="SEGMENT")
    a.add_argument("--ttc", nargs=2, type=int, metavar=("LEAD", "FOLLOW"))
    a.add_argument("--pet", nargs=2, type=int, metavar=("FIRST", "SECOND"))
    a.add_argument("--zone")
    a.add_argument("--incidents", metavar="RULES", help="YAML list of incident rules")
    a.add_argument("-o", "--output-dir")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("scenario", help="scenario YAML, or 'intersection' / 'crossing'")
    s.add_argument("-o", "--output-dir", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float, help="override the keypoint pixel noise")
    s.set_defaults(func=cmd_synth)

    sc = sub.add_parser("score", help="score trajectories against ground truth, or run a scenario suite")
    sc.add_argument("--truth")
    sc.add_argument("--trajectories")
    sc.add_argument("--scenarios", nargs="*", metavar="SPEC")
    sc.add_argument("--gate", type=float, default=2.0)
    sc.add_argument("-o", "--output")
    sc.set_defaults(func=cmd_score)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"aerotrack: error: {exc}\n")
        return EXIT_CONFIG
    _setup_logging(args.log_level, args.log_format)
    try:
        return args.func(args)
    except (ConfigError, QueryError, PreconditionError, FileNotFoundError) as exc:
        log.error("%s", exc, extra={"fields": {"event": "error", "kind": "config"}})
        return EXIT_CONFIG
    except DataError as exc:
        log.error("%s", exc, extra={"fields": {"event": "error", "kind": "data"}})
        return EXIT_DATA
    except AerotrackError as exc:
        log.error("%s", exc, extra={"fields": {"event": "error", "kind": "internal"}})
        return EXIT_INTERNAL
    except Exception as exc:  # last-resort guard for the exit-code contract
        log.error("internal error: %r", exc, extra={"fields": {"event": "error", "kind": "internal"}})
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
