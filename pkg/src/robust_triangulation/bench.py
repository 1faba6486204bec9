"""Seeded synthetic benchmark, uncertainty pruning and refiner comparison.

Every run draws its scene from ``default_rng([seed, config, run])``. All
methods of a run share the scene and the RANSAC seed, so methods differ only
in what they do with it. Records keep wall time in memory, but CSV output
leaves it out so reports are byte-identical across repeats.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import RansacConfig
from .geometry import score_point
from .midpoint import MidpointStatus
from .ransac import Status, baseline_triangulate, triangulate
from .scene import OUTLIER_MAX_PX, OUTLIER_MIN_PX, generate_scene
from .uncertainty import estimate_sigma, sampled_max_parallax

METHODS = {
    "ransac": (triangulate, "none"),
    "ransac+dlt": (triangulate, "dlt"),
    "ransac+linls": (triangulate, "linls"),
    "ransac+gn": (triangulate, "gn"),
    "baseline": (baseline_triangulate, "none"),
    "baseline+dlt": (baseline_triangulate, "dlt"),
    "baseline+linls": (baseline_triangulate, "linls"),
    "baseline+gn": (baseline_triangulate, "gn"),
}

REJECTIONS = tuple(s.value for s in MidpointStatus if s is not MidpointStatus.ACCEPTED)

RECORD_FIELDS = (
    "config", "run", "method", "n", "d", "sigma", "outlier_ratio", "status",
    "err3d", "mean_e2d", "mean_e2d_true", "n_inliers", "n_true_inliers",
    "precision", "recall", "sigma3d", "beta_max", "hypotheses", "midpoints",
    "refine_iterations",
) + tuple(f"rej_{r}" for r in REJECTIONS)

SUMMARY_FIELDS = (
    "config", "method", "n", "d", "sigma", "outlier_ratio", "runs", "failures",
    "err3d_p50", "err3d_p90", "err3d_p99", "err3d_rms", "mean_e2d_true",
    "precision_mean", "recall_mean", "recall_p50", "hypotheses_mean", "midpoints_mean",
)

OUTLIER_LAW = (f"uniform direction, magnitude uniform in [{OUTLIER_MIN_PX:g}, "
               f"{OUTLIER_MAX_PX:g}] px")


def normalize_bench_spec(spec) -> list:
    configs = spec.get("configs") if isinstance(spec, dict) else spec
    if not configs:
        raise ValueError("benchmark spec lists no configurations")
    out = []
    for c in configs:
        out.append({
            "n": int(c["n"]), "d": float(c["d"]), "sigma": float(c["sigma"]),
            "outlier_ratio": float(c.get("outlier_ratio", 0.0)),
            "runs": int(c["runs"]),
        })
    return out


def spec_methods(spec, default=("ransac+gn",)) -> list:
    methods = list(spec.get("methods", default)) if isinstance(spec, dict) else list(default)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {sorted(METHODS)}")
    return methods


def spec_config(spec) -> RansacConfig:
    overrides = spec.get("ransac", {}) if isinstance(spec, dict) else {}
    overrides = dict(overrides)
    degrees = {k: overrides.pop(k) for k in ("min_parallax_deg", "max_parallax_deg")
               if k in overrides}
    return RansacConfig.from_degrees(**degrees, **overrides)


@dataclass
class BenchReport:
    records: list
    methods: list
    configs: list
    seed: int
    meta: dict = field(default_factory=dict)
    scenes: Optional[list] = None

    def select(self, method: Optional[str] = None, config: Optional[int] = None) -> list:
        return [r for r in self.records
                if (method is None or r["method"] == method)
                and (config is None or r["config"] == config)]

    def column(self, name: str, method: Optional[str] = None,
               config: Optional[int] = None) -> np.ndarray:
        return np.array([r[name] for r in self.select(method, config)], dtype=float)

    def summary(self) -> list:
        rows = []
        for ci, c in enumerate(self.configs):
            for m in self.methods:
                rows.append(summarize(self.select(m, ci), ci, m, c))
        return rows

    def write_csv(self, path) -> None:
        write_rows(path, RECORD_FIELDS, self.records)

    def write_summary_csv(self, path) -> None:
        write_rows(path, SUMMARY_FIELDS, self.summary())


def summarize(records: list, config_index: int, method: str, config: dict) -> dict:
    err = np.array([r["err3d"] for r in records], dtype=float)
    fails = sum(r["status"] != Status.OK.value for r in records)
    finite = err[np.isfinite(err)]

    def q(p):
        return float(np.percentile(err, p)) if len(err) else math.nan

    def mean(name):
        v = np.array([r[name] for r in records], dtype=float)
        v = v[np.isfinite(v)]
        return float(np.mean(v)) if len(v) else math.nan

    recall = np.array([r["recall"] for r in records], dtype=float)
    return {
        "config": config_index, "method": method, "n": config["n"], "d": config["d"],
        "sigma": config["sigma"], "outlier_ratio": config["outlier_ratio"],
        "runs": len(records), "failures": fails,
        "err3d_p50": q(50), "err3d_p90": q(90), "err3d_p99": q(99),
        "err3d_rms": float(np.sqrt(np.mean(finite ** 2))) if len(finite) else math.nan,
        "mean_e2d_true": mean("mean_e2d_true"),
        "precision_mean": mean("precision"), "recall_mean": mean("recall"),
        "recall_p50": float(np.median(recall)) if len(recall) else math.nan,
        "hypotheses_mean": mean("hypotheses"), "midpoints_mean": mean("midpoints"),
    }


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def read_rows(path) -> list:
    """Read a CSV written by :func:`write_rows`, converting numeric columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = int(v)
            except ValueError:
                try:
                    r[k] = float(v)
                except ValueError:
                    pass
    return rows


def _inlier_stats(result, scene):
    true = np.flatnonzero(~scene.outlier_mask)
    found = set(result.inliers)
    hit = len(found.intersection(true.tolist()))
    precision = hit / len(found) if found else 0.0
    recall = hit / len(true) if len(true) else 1.0
    return precision, recall, len(true)


def _mean_true_error(problem, x, scene) -> float:
    # reprojection error against every truly inlying observation
    score = score_point(problem, x, math.inf)
    true = ~scene.outlier_mask
    return float(np.mean(score.e2d[true])) if true.any() else math.nan


def run_benchmark(bench_spec, methods=None, seed: int = 0, grid=None,
                  config: Optional[RansacConfig] = None, keep_scenes: bool = False,
                  progress=None) -> BenchReport:
    """Run every method on every seeded scene of ``bench_spec``.

    ``bench_spec`` is a list of ``{"n", "d", "sigma", "outlier_ratio", "runs"}``
    entries or a dict holding it under ``"configs"``, optionally with
    ``"methods"`` and ``"ransac"`` (config overrides) keys. When ``grid`` is
    given, each record carries the interpolated 3D uncertainty.
    """
    configs = normalize_bench_spec(bench_spec)
    methods = spec_methods(bench_spec) if methods is None else list(methods)
    spec_methods({"methods": methods})
    base = spec_config(bench_spec) if config is None else config
    records, scenes = [], []
    view_id = 0

    for ci, c in enumerate(configs):
        for ri in range(c["runs"]):
            rng = np.random.default_rng([seed, ci, ri])
            scene = generate_scene(c["n"], c["d"], c["sigma"], c["outlier_ratio"], rng,
                                   first_view_id=view_id)
            if keep_scenes:
                scenes.append(scene)
                view_id += c["n"]
            problem = scene.problem()
            run_seed = int(rng.integers(2**63))
            for m in methods:
                fn, refiner = METHODS[m]
                cfg = replace(base, seed=run_seed, refiner=refiner)
                t0 = time.perf_counter()
                res = fn(problem, cfg)
                wall = time.perf_counter() - t0
                records.append(_record(ci, ri, m, c, scene, problem, res, cfg, grid, wall))
        if progress is not None:
            progress(ci, c)

    return BenchReport(
        records=records, methods=methods, configs=configs, seed=seed,
        meta={"outlier_law": OUTLIER_LAW, "ransac": base.__dict__.copy()},
        scenes=scenes if keep_scenes else None,
    )


def _record(ci, ri, method, c, scene, problem, res, cfg, grid, wall) -> dict:
    diag = res.diagnostics
    ok = res.status is not Status.NO_HYPOTHESIS
    err = float(np.linalg.norm(res.x_est - scene.point_gt)) if ok else math.inf
    precision, recall, n_true = _inlier_stats(res, scene)
    beta = math.nan
    sigma3d = math.inf
    if res.n_inliers >= 2:
        # own stream so the parallax sample does not depend on the method's draws
        beta_rng = np.random.default_rng([cfg.seed % 2**32, ri, 1])
        beta = sampled_max_parallax(problem, res.inliers, cfg.delta_pair, beta_rng)
        if grid is not None:
            sigma3d = estimate_sigma(grid, res.n_inliers, res.mean_e2d, beta)
    rec = {
        "config": ci, "run": ri, "method": method, "n": c["n"], "d": c["d"],
        "sigma": c["sigma"], "outlier_ratio": c["outlier_ratio"],
        "status": res.status.value, "err3d": err, "mean_e2d": res.mean_e2d,
        "mean_e2d_true": _mean_true_error(problem, res.x_est, scene) if ok else math.inf,
        "n_inliers": res.n_inliers, "n_true_inliers": n_true,
        "precision": precision, "recall": recall, "sigma3d": sigma3d, "beta_max": beta,
        "hypotheses": diag.hypotheses_drawn, "midpoints": diag.midpoints_computed,
        "refine_iterations": diag.refine_iterations, "wall_s": wall,
    }
    for r in REJECTIONS:
        rec[f"rej_{r}"] = diag.stage_rejections.get(r, 0)
    return rec


def default_thresholds(records, count: int = 20) -> list:
    """Descending thresholds: infinity, then quantiles of the finite uncertainties."""
    s = np.array([r["sigma3d"] for r in records], dtype=float)
    s = s[np.isfinite(s)]
    if len(s) == 0:
        return [math.inf]
    qs = np.quantile(s, np.linspace(1.0, 0.0, count))
    return [math.inf] + sorted(set(float(v) for v in qs), reverse=True)


def prune_by_uncertainty(records, grid, delta_3d, thresholds=None, max_mean_e2d=None):
    """Keep records whose uncertainty is below ``delta_3d`` and trace the trade-off.

    ``sigma3d`` is recomputed from each record's inlier count, mean inlier
    error and sampled max parallax when ``grid`` is given. Records with a
    mean inlier error of ``max_mean_e2d`` or more are dropped beforehand.
    The curve has one row per threshold with the retained count and 3D error
    percentiles of the retained records.
    """
    rows = []
    for r in records:
        if max_mean_e2d is not None and not float(r["mean_e2d"]) < max_mean_e2d:
            continue
        r = dict(r)
        if grid is not None:
            r["sigma3d"] = (estimate_sigma(grid, int(r["n_inliers"]), float(r["mean_e2d"]),
                                           float(r["beta_max"]))
                            if int(r["n_inliers"]) >= 2 else math.inf)
        rows.append(r)
    kept = [r for r in rows if r["sigma3d"] < delta_3d]
    if thresholds is None:
        thresholds = default_thresholds(rows)
    curve = [_curve_row(rows, t) for t in thresholds]
    return kept, curve


CURVE_FIELDS = ("threshold", "retained", "fraction", "err3d_p50", "err3d_p90", "err3d_p99")


def _curve_row(rows, threshold) -> dict:
    err = np.array([r["err3d"] for r in rows if r["sigma3d"] < threshold], dtype=float)

    def q(p):
        return float(np.percentile(err, p)) if len(err) else math.nan

    return {"threshold": float(threshold), "retained": len(err),
            "fraction": len(err) / len(rows) if rows else math.nan,
            "err3d_p50": q(50), "err3d_p90": q(90), "err3d_p99": q(99)}


COMPARE_FIELDS = ("config", "run", "n", "d", "outlier_ratio", "mean_e2d_dlt",
                  "mean_e2d_gn", "delta_e2d", "err3d_dlt", "err3d_gn")


def compare_optimizers(bench_spec, seed: int = 0, config=None) -> list:
    """Per-run mean inlier 2D error after DLT and after GN refinement.

    Both refiners start from the same RANSAC hypothesis. ``delta_e2d`` is
    DLT minus GN, so positive values mean GN reduced the error.
    """
    report = run_benchmark(bench_spec, ["ransac+dlt", "ransac+gn"], seed, config=config)
    return pair_refiner_runs(report.records)


def pair_refiner_runs(records, first: str = "ransac+dlt", second: str = "ransac+gn") -> list:
    """Join the DLT and GN records of each run into one comparison row."""
    by_run = {}
    for r in records:
        if r["method"] in (first, second):
            by_run.setdefault((r["config"], r["run"]), {})[r["method"]] = r
    rows = []
    for (ci, ri), pair in sorted(by_run.items()):
        dlt, gn = pair[first], pair[second]
        rows.append({
            "config": ci, "run": ri, "n": dlt["n"], "d": dlt["d"],
            "outlier_ratio": dlt["outlier_ratio"],
            "mean_e2d_dlt": dlt["mean_e2d"], "mean_e2d_gn": gn["mean_e2d"],
            "delta_e2d": dlt["mean_e2d"] - gn["mean_e2d"],
            "err3d_dlt": dlt["err3d"], "err3d_gn": gn["err3d"],
        })
    return rows
