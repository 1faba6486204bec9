"""Command-line entry point: triangulate datasets, learn grids, benchmark, prune."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import bench, io
from .config import REFINERS, RansacConfig
from .errors import TriangulationError
from .geometry import Observation, TriangulationProblem
from .ransac import Status, triangulate
from .uncertainty import MIN_CELL_COUNT, learn_grid

log = logging.getLogger("robust_triangulation")

REPORT_FIELDS = ("point_id", "status", "x", "y", "z", "sigma3d", "mean_e2d", "n_inliers",
                 "n_views", "beta_max", "hypotheses", "midpoints")

EXIT_INVALID = 2


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _point_seed(seed: int, point_id: int) -> int:
    return int(np.random.SeedSequence([seed, point_id]).generate_state(1, np.uint64)[0])


def cmd_triangulate(args) -> int:
    config = RansacConfig.from_degrees(
        min_parallax_deg=args.min_parallax_deg, max_parallax_deg=args.max_parallax_deg,
        eta=args.eta, delta_2d=args.delta_2d, delta_epipolar=args.delta_epipolar,
        delta_update=args.delta_update, delta_pair=args.delta_pair, refiner=args.refiner,
        seed=args.seed,
    )
    views = io.read_cameras(args.cameras)
    tracks = io.read_tracks(args.tracks, views, min_views=args.min_views)
    grid = io.read_grid(args.grid) if args.grid else None

    points, report = [], []
    for pid, obs in tracks:
        problem = TriangulationProblem([views[v] for v, _ in obs],
                                       [Observation(v, uv) for v, uv in obs])
        cfg = RansacConfig(**{**config.__dict__, "seed": _point_seed(args.seed, pid)})
        res = triangulate(problem, cfg, grid)
        status = res.status.value
        keep = res.status is Status.OK and res.n_inliers >= args.min_views
        if res.status is Status.OK and not keep:
            log.warning("dropping point %d: %d inlier(s) < %d", pid, res.n_inliers,
                        args.min_views)
            status = "TooFewInliers"
        x = res.x_est if res.status is not Status.NO_HYPOTHESIS else np.full(3, math.nan)
        report.append({
            "point_id": pid, "status": status,
            "x": x[0], "y": x[1], "z": x[2], "sigma3d": res.sigma_3d, "mean_e2d": res.mean_e2d,
            "n_inliers": res.n_inliers, "n_views": problem.n,
            "beta_max": res.diagnostics.beta_max_deg,
            "hypotheses": res.diagnostics.hypotheses_drawn,
            "midpoints": res.diagnostics.midpoints_computed,
        })
        if keep:
            points.append((*x, res.sigma_3d, res.mean_e2d, res.n_inliers))

    io.write_ply(args.out, points)
    bench.write_rows(args.report, REPORT_FIELDS, report)
    log.info("triangulated %d of %d tracks", len(points), len(tracks))
    return 0


def cmd_learn_grid(args) -> int:
    spec = _load_json(args.spec)
    grid = learn_grid(spec, args.seed, smooth=not args.no_smooth, min_count=args.min_count,
                      progress=lambda i, c: log.info("simulated config %d: %s", i, c))
    io.write_grid(args.out, grid)
    return 0


def cmd_bench(args) -> int:
    spec = _load_json(args.spec)
    grid = io.read_grid(args.grid) if args.grid else None
    report = bench.run_benchmark(spec, seed=args.seed, grid=grid, keep_scenes=bool(args.dump),
                                 progress=lambda i, c: log.info("config %d done: %s", i, c))
    report.write_csv(args.out)
    if args.summary:
        report.write_summary_csv(args.summary)
    if args.dump:
        dump_scenes(args.dump, report.scenes)
    return 0


def dump_scenes(directory, scenes) -> None:
    """Write scenes as a cameras/tracks dataset plus a ground-truth CSV."""
    os.makedirs(directory, exist_ok=True)
    views, tracks, truth = [], [], []
    for pid, s in enumerate(scenes):
        views.extend(s.views)
        tracks.append((pid, [(v.id, uv) for v, uv in zip(s.views, s.obs_noisy)]))
        truth.append({"point_id": pid, "x": s.point_gt[0], "y": s.point_gt[1],
                      "z": s.point_gt[2], "n_views": s.n, "n_outliers": int(s.outlier_mask.sum())})
    io.write_cameras(os.path.join(directory, "cameras.txt"), views)
    io.write_tracks(os.path.join(directory, "tracks.txt"), tracks)
    bench.write_rows(os.path.join(directory, "ground_truth.csv"),
                     ("point_id", "x", "y", "z", "n_views", "n_outliers"), truth)


def cmd_prune(args) -> int:
    rows = bench.read_rows(args.points)
    grid = io.read_grid(args.grid)
    for r in rows:
        r.setdefault("err3d", math.nan)
    thresholds = None
    if args.thresholds:
        thresholds = [float(t) for t in args.thresholds.split(",")]
    kept, curve = bench.prune_by_uncertainty(rows, grid, args.delta_3d, thresholds,
                                             max_mean_e2d=args.max_e2d)
    fields = list(rows[0].keys()) if rows else ["sigma3d"]
    bench.write_rows(args.out, fields, kept)
    if args.curve:
        bench.write_rows(args.curve, bench.CURVE_FIELDS, curve)
    log.info("kept %d of %d points", len(kept), len(rows))
    return 0


def cmd_compare_opt(args) -> int:
    rows = bench.compare_optimizers(_load_json(args.spec), seed=args.seed)
    bench.write_rows(args.out, bench.COMPARE_FIELDS, rows)
    delta = np.array([r["delta_e2d"] for r in rows], dtype=float)
    delta = delta[np.isfinite(delta)]
    if len(delta):
        log.info("mean 2D error decrease from DLT to GN: %.6g px over %d runs",
                 float(np.mean(delta)), len(delta))
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="robust-triangulate", description=__doc__,
                                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    d = RansacConfig()
    t = sub.add_parser("triangulate", help="triangulate every track of a dataset",
                       formatter_class=fmt)
    t.add_argument("--cameras", required=True, help="cameras file")
    t.add_argument("--tracks", required=True, help="tracks file")
    t.add_argument("--grid", help="uncertainty grid file; sigma3d is inf without it")
    t.add_argument("--min-views", type=int, default=3,
                   help="skip tracks with fewer observations and drop points with fewer inliers")
    t.add_argument("--eta", type=float, default=d.eta, help="RANSAC confidence")
    t.add_argument("--delta-2d", type=float, default=d.delta_2d,
                   help="inlier reprojection threshold in pixels")
    t.add_argument("--delta-epipolar", type=float, default=d.delta_epipolar,
                   help="normalized epipolar error threshold")
    t.add_argument("--min-parallax-deg", type=float, default=4.0,
                   help="minimum two-view parallax")
    t.add_argument("--max-parallax-deg", type=float, default=90.0,
                   help="maximum two-view parallax")
    t.add_argument("--delta-update", type=float, default=d.delta_update,
                   help="GN stops when the mean inlier error moves less than this (px)")
    t.add_argument("--delta-pair", type=int, default=d.delta_pair,
                   help="ray pairs sampled for the max parallax")
    t.add_argument("--refiner", choices=REFINERS, default=d.refiner, help="local refinement")
    t.add_argument("--seed", type=int, default=d.seed, help="RANSAC seed")
    t.add_argument("--out", required=True, help="output PLY")
    t.add_argument("--report", required=True, help="per-point CSV report")
    t.set_defaults(func=cmd_triangulate)

    g = sub.add_parser("learn-grid", help="simulate and smooth an uncertainty grid",
                       formatter_class=fmt)
    g.add_argument("--spec", required=True, help="JSON simulation spec")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="grid file")
    g.add_argument("--min-count", type=int, default=MIN_CELL_COUNT,
                   help="cells with fewer samples are treated as empty")
    g.add_argument("--no-smooth", action="store_true", help="keep the raw binned grid")
    g.set_defaults(func=cmd_learn_grid)

    b = sub.add_parser("bench", help="seeded synthetic benchmark", formatter_class=fmt)
    b.add_argument("--spec", required=True, help="JSON benchmark spec")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="per-run CSV")
    b.add_argument("--summary", help="per-config/method summary CSV")
    b.add_argument("--grid", help="uncertainty grid used to fill sigma3d")
    b.add_argument("--dump", help="directory to export scenes as a cameras/tracks dataset")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("prune", help="filter points by predicted 3D uncertainty",
                       formatter_class=fmt)
    r.add_argument("--points", required=True, help="report CSV from bench or triangulate")
    r.add_argument("--grid", required=True, help="uncertainty grid file")
    r.add_argument("--delta-3d", type=float, required=True, help="keep sigma3d below this")
    r.add_argument("--out", required=True, help="retained rows CSV")
    r.add_argument("--curve", help="trade-off curve CSV")
    r.add_argument("--max-e2d", type=float,
                   help="drop points whose mean inlier error (px) is not below this first")
    r.add_argument("--thresholds", help="comma-separated thresholds for the curve")
    r.set_defaults(func=cmd_prune)

    c = sub.add_parser("compare-opt", help="per-run 2D error after DLT vs GN refinement",
                       formatter_class=fmt)
    c.add_argument("--spec", required=True, help="JSON benchmark spec")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True, help="CSV output")
    c.set_defaults(func=cmd_compare_opt)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TriangulationError, ValueError, KeyError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "path", None) is not None:
            err["path"] = str(exc.path)
        if getattr(exc, "line", None) is not None:
            err["line"] = exc.line
        print(json.dumps(err), file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
