"""Batch command line: clean, match, compare, synth, evaluate.

Wall-clock timings go into ``run_manifest.json``; the GeoJSON/CSV outputs
are a pure function of inputs and config so identical runs produce identical
bytes (pass ``--timings`` to put measured runtimes into report.csv instead
of zeros).
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from .forces import ForceConfig, parse_key_value_file
from .matcher import ForceDirectedMatcher
from .metrics import (
    EvalReport,
    aggregate,
    avg_error,
    ground_truth_scores,
    identical_path_share,
    length_index,
    report_csv_rows,
)
from .roadnet import load_graph
from .snapper import MatchResult, SnapConfig, UnmatchableTrajectory, edge_csv_rows, to_geojson
from .testbed import (
    SynthConfig,
    gen_case,
    gen_grid,
    grid_rows,
    load_truth_file,
    write_fixes_csv,
    write_road_file,
    write_truth_file,
)
from .trajectory import (
    CleanConfig,
    CleaningReport,
    Trajectory,
    clean,
    evaluation_filter,
    load_trajectories,
    polyline_length,
    write_trajectories,
)


def _now() -> str:
    return datetime.now(tz=timezone.utc).isoformat(timespec="seconds")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def load_run_config(
    path: str | None, iterations: int | None = None
) -> tuple[str, ForceConfig, SnapConfig]:
    """Resolve a key=value config file into force and snap settings."""
    if path is None:
        label = "default"
        force_map: dict[str, str] = {}
        snap_map: dict[str, str] = {}
    else:
        mapping = parse_key_value_file(path)
        force_map, snap_map = {}, {}
        force_keys = ForceConfig.field_names()
        for key, value in mapping.items():
            if key in force_keys:
                force_map[key] = value
            elif key in SnapConfig.CONFIG_KEYS:
                snap_map[key] = value
            else:
                raise ValueError(f"{path}: unknown config key {key!r}")
        label = Path(path).stem
    force_cfg = ForceConfig.from_mapping(force_map)
    snap_cfg = SnapConfig.from_mapping(snap_map)
    if iterations is not None:
        force_cfg.iterations = iterations
        label = f"{label}_it{iterations}"
    return label, force_cfg, snap_cfg


def _matcher_from_configs(force_cfg: ForceConfig, snap_cfg: SnapConfig) -> ForceDirectedMatcher:
    return ForceDirectedMatcher(
        iterations=force_cfg.iterations,
        edge_constant=force_cfg.edge_constant,
        spring_constant=force_cfg.spring_constant,
        step_size=force_cfg.step_size,
        cutoff=force_cfg.cutoff,
        max_step=force_cfg.max_step,
        min_distance=force_cfg.min_distance,
        distance_variant=force_cfg.distance_variant,
        heading_variant=force_cfg.heading_variant,
        repulsion_variant=force_cfg.repulsion_variant,
        direction_variant=force_cfg.direction_variant,
        force_law=force_cfg.force_law,
        natural_length_mode=force_cfg.natural_length_mode,
        fixed_natural_length=force_cfg.fixed_natural_length,
        snap_radii=snap_cfg.radii,
        alignment_floor=snap_cfg.alignment_floor,
        pure_nearest=snap_cfg.pure_nearest,
        require_alignment=snap_cfg.require_alignment,
        snap_stride=snap_cfg.stride,
    )


def _build_trajectories(source: str, proj) -> list[Trajectory]:
    """One trajectory per vehicle id, duplicate timestamps collapsed."""
    out = []
    for vid, fixes in sorted(load_trajectories(source).items()):
        kept = []
        for f in fixes:
            if kept and f.t <= kept[-1].t:
                continue
            kept.append(f)
        if kept:
            out.append(Trajectory(vid, kept).bind(proj))
    return out


_BATCH_CTX: dict = {}


def _match_one(index: int):
    matcher: ForceDirectedMatcher = _BATCH_CTX["matcher"]
    t: Trajectory = _BATCH_CTX["trajectories"][index]
    start = time.perf_counter()
    try:
        result = matcher.match(t)
        return index, result, time.perf_counter() - start, None
    except Exception as exc:  # a bad trajectory must not abort the batch
        return index, None, time.perf_counter() - start, str(exc)


def _run_batch(
    matcher: ForceDirectedMatcher, trajectories: list[Trajectory], jobs: int
) -> list[tuple[int, MatchResult | None, float, str | None]]:
    _BATCH_CTX["matcher"] = matcher
    _BATCH_CTX["trajectories"] = trajectories
    indices = range(len(trajectories))
    if jobs <= 1:
        return [_match_one(i) for i in indices]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(jobs) as pool:
        return pool.map(_match_one, indices)


def _reports_from_batch(graph, trajectories, batch, iterations, with_timings):
    reports: dict[str, EvalReport] = {}
    failures: dict[str, str] = {}
    results: dict[str, MatchResult] = {}
    runtimes: dict[str, float] = {}
    for index, result, runtime, error in batch:
        t = trajectories[index]
        runtimes[t.id] = runtime
        if result is None or error is not None:
            failures[t.id] = error or "match failed"
            continue
        results[t.id] = result
        try:
            reports[t.id] = EvalReport(
                trajectory_id=t.id,
                length_index=length_index(t, result),
                avg_error_m=avg_error(t, result, graph),
                runtime_s=runtime if with_timings else 0.0,
                iterations=iterations,
                gap_count=result.gap_count,
                traj_length_m=polyline_length(t),
                n_points=len(t),
            )
        except ValueError as exc:
            failures[t.id] = str(exc)
            results.pop(t.id, None)
    return results, reports, failures, runtimes


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    cfg = SynthConfig()
    if args.config:
        cfg = SynthConfig.from_mapping(parse_key_value_file(args.config))
    if args.seed is not None:
        cfg = SynthConfig(**{**asdict(cfg), "seed": args.seed})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    nodes, streets = grid_rows(cfg)
    graph = gen_grid(cfg)
    write_road_file(out_dir / "map.roads", nodes, streets)

    fixes_by_id = {}
    truth_by_id = {}
    for k in range(cfg.n_trajectories):
        case = gen_case(graph, cfg, k)
        tid = f"t{k:04d}"
        fixes_by_id[tid] = case.fixes
        truth_by_id[tid] = case.truth
    write_fixes_csv(out_dir / "trajectories.csv", fixes_by_id)
    write_truth_file(out_dir / "truth.csv", truth_by_id)
    _log(
        f"[synth] wrote {len(graph.nodes)} nodes, {len(graph.edges)} directed edges, "
        f"{cfg.n_trajectories} trajectories to {out_dir}"
    )
    return 0


def cmd_clean(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = CleanConfig()
    if args.bbox == "none":
        cfg.bbox = None
    elif args.bbox:
        values = [float(v) for v in args.bbox.split(",")]
        if len(values) != 4:
            raise ValueError("--bbox expects lat_min,lat_max,lon_min,lon_max")
        cfg.bbox = tuple(values)  # type: ignore[assignment]
    if args.speed_threshold is not None:
        cfg.speed_threshold_kmh = args.speed_threshold

    total = CleaningReport()
    cleaned: list[Trajectory] = []
    for vid, fixes in sorted(load_trajectories(args.trajectories).items()):
        trajectories, report = clean(fixes, cfg, vehicle_id=vid)
        cleaned.extend(trajectories)
        total.merge(report)
    write_trajectories(cleaned, out_dir / "cleaned.csv")

    print("cleaning report")
    for name in (
        "points_in",
        "points_deleted",
        "points_interpolated",
        "points_dropped",
        "points_out",
        "splits",
        "trajectories_out",
        "trajectories_dropped",
    ):
        print(f"  {name:22s} {getattr(total, name)}")
    return 0


def cmd_match(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    label, force_cfg, snap_cfg = load_run_config(args.config, args.iterations)
    graph = load_graph(args.map)
    trajectories = _build_trajectories(args.trajectories, graph.projection)

    manifest = {
        "command": "match",
        "inputs": {
            "map": str(args.map),
            "trajectories": str(args.trajectories),
            "config": str(args.config) if args.config else None,
        },
        "config_label": label,
        "force_config": asdict(force_cfg),
        "snap_config": asdict(snap_cfg),
        "out_dir": str(out_dir),
        "started_at": _now(),
        "completed": False,
    }
    _write_manifest(out_dir, manifest)

    matcher = _matcher_from_configs(force_cfg, snap_cfg).fit(graph)
    batch = _run_batch(matcher, trajectories, args.jobs)
    results, reports, failures, runtimes = _reports_from_batch(
        graph, trajectories, batch, force_cfg.iterations, args.timings
    )

    for t in trajectories:
        if t.id in failures:
            _log(f"[match] {t.id}: FAILED ({failures[t.id]})")
            continue
        result = results[t.id]
        report = reports[t.id]
        with open(out_dir / f"{t.id}.geojson", "w", encoding="utf-8") as fh:
            fh.write(to_geojson(result, t, graph))
            fh.write("\n")
        with open(out_dir / f"{t.id}.edges.csv", "w", encoding="utf-8") as fh:
            fh.write("\n".join(edge_csv_rows(result)))
            fh.write("\n")
        _log(
            f"[match] {t.id}: index={report.length_index:.3f} "
            f"err={report.avg_error_m:.1f}m gaps={report.gap_count}"
        )
    with open(out_dir / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_csv_rows(list(reports.values()), label)))
        fh.write("\n")

    manifest["trajectories"] = {
        t.id: {
            "status": "failed" if t.id in failures else "ok",
            "error": failures.get(t.id),
            "runtime_s": round(runtimes.get(t.id, 0.0), 6),
        }
        for t in trajectories
    }
    manifest["timing"] = {"total_runtime_s": round(sum(runtimes.values()), 6)}
    manifest["completed"] = True
    _write_manifest(out_dir, manifest)
    return 0


def _evaluate_batch(args, truth=None):
    label, force_cfg, snap_cfg = load_run_config(args.config, args.iterations)
    graph = load_graph(args.map)
    trajectories = _build_trajectories(args.trajectories, graph.projection)
    matcher = _matcher_from_configs(force_cfg, snap_cfg).fit(graph)
    batch = _run_batch(matcher, trajectories, args.jobs)
    return graph, trajectories, label, force_cfg, _reports_from_batch(
        graph, trajectories, batch, force_cfg.iterations, args.timings
    )


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = load_truth_file(args.truth) if args.truth else None
    graph, trajectories, label, force_cfg, batch_out = _evaluate_batch(args)
    results, reports, failures, _ = batch_out

    rows = report_csv_rows(list(reports.values()), label)
    if truth is not None:
        rows[0] += ",edge_precision,edge_recall,length_ratio_to_truth"
        for i, tid in enumerate(sorted(reports), start=1):
            if tid in truth and tid in results:
                p, r, ratio = ground_truth_scores(results[tid], truth[tid], graph)
                rows[i] += f",{p:.6f},{r:.6f},{ratio:.6f}"
            else:
                rows[i] += ",,,"
    with open(out_dir / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows))
        fh.write("\n")

    if reports:
        summary = aggregate(list(reports.values()))
        print(
            f"{label}: n={summary.n} mean_length_index={summary.mean_length_index:.4f} "
            f"mean_avg_error_m={summary.mean_avg_error_m:.3f}"
        )
    for tid, msg in sorted(failures.items()):
        _log(f"[evaluate] {tid}: FAILED ({msg})")
    return 0


def cmd_compare(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    graph = load_graph(args.map)
    trajectories = _build_trajectories(args.trajectories, graph.projection)
    if not trajectories:
        _log("[compare] nothing to compare")
        return 2

    sides = []
    for config_path, iterations in (
        (args.config_a, args.iterations_a),
        (args.config_b, args.iterations_b),
    ):
        label, force_cfg, snap_cfg = load_run_config(config_path, iterations)
        matcher = _matcher_from_configs(force_cfg, snap_cfg).fit(graph)
        batch = _run_batch(matcher, trajectories, args.jobs)
        results, reports, failures, runtimes = _reports_from_batch(
            graph, trajectories, batch, force_cfg.iterations, with_timings=True
        )
        sides.append((label, results, reports, failures, runtimes))

    by_id = {t.id: t for t in trajectories}
    kept = []
    for tid in sorted(by_id):
        if all(tid in reports for _, _, reports, _, _ in sides):
            if args.no_filter or all(
                evaluation_filter(by_id[tid], results[tid].path_length)
                for _, results, _, _, _ in sides
            ):
                kept.append(tid)
    if not kept:
        _log("[compare] nothing to compare")
        return 2

    share = identical_path_share(
        [sides[0][1][tid] for tid in kept], [sides[1][1][tid] for tid in kept]
    )
    lines = [
        "config_label,n,mean_length_index,mean_avg_error_m,mean_runtime_s,identical_path_pct"
    ]
    print(
        f"{'config':24s} {'n':>5s} {'length_index':>13s} {'avg_error_m':>12s} "
        f"{'runtime_s':>10s} {'identical%':>10s}"
    )
    for label, results, reports, failures, runtimes in sides:
        summary = aggregate([reports[tid] for tid in kept])
        mean_rt = sum(runtimes[tid] for tid in kept) / len(kept)
        lines.append(
            f"{label},{summary.n},{summary.mean_length_index:.6f},"
            f"{summary.mean_avg_error_m:.6f},{mean_rt:.6f},{share * 100:.2f}"
        )
        print(
            f"{label:24s} {summary.n:5d} {summary.mean_length_index:13.4f} "
            f"{summary.mean_avg_error_m:12.3f} {mean_rt:10.3f} {share * 100:9.1f}%"
        )
    with open(out_dir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    _log(f"[compare] kept {len(kept)}/{len(trajectories)} trajectories")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forcematch",
        description="Offline GPS map matching by force-directed perturbation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_clean = sub.add_parser("clean", help="clean raw fixes into trajectories")
    p_clean.add_argument("--trajectories", required=True)
    p_clean.add_argument("--out", required=True)
    p_clean.add_argument("--bbox", default=None, help="lat0,lat1,lon0,lon1 or 'none'")
    p_clean.add_argument("--speed-threshold", type=float, default=None, help="km/h")
    p_clean.set_defaults(func=cmd_clean)

    p_match = sub.add_parser("match", help="match trajectories onto a road map")
    p_match.add_argument("--map", required=True)
    p_match.add_argument("--trajectories", required=True)
    p_match.add_argument("--config", default=None)
    p_match.add_argument("--out", required=True)
    p_match.add_argument("--iterations", type=int, default=None)
    p_match.add_argument("--jobs", type=int, default=1)
    p_match.add_argument("--timings", action="store_true",
                         help="write measured runtimes into report.csv")
    p_match.set_defaults(func=cmd_match)

    p_eval = sub.add_parser("evaluate", help="match and report quality metrics")
    p_eval.add_argument("--map", required=True)
    p_eval.add_argument("--trajectories", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--truth", default=None)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--iterations", type=int, default=None)
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--timings", action="store_true")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="side-by-side config comparison")
    p_cmp.add_argument("--map", required=True)
    p_cmp.add_argument("--trajectories", required=True)
    p_cmp.add_argument("--config-a", default=None)
    p_cmp.add_argument("--config-b", default=None)
    p_cmp.add_argument("--iterations-a", type=int, default=0,
                       help="default 0: routing-only baseline")
    p_cmp.add_argument("--iterations-b", type=int, default=None)
    p_cmp.add_argument("--no-filter", action="store_true",
                       help="skip the length/index evaluation filter")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.set_defaults(func=cmd_compare)

    p_synth = sub.add_parser("synth", help="generate a synthetic city + drives")
    p_synth.add_argument("--config", default=None)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, UnmatchableTrajectory) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
