import math

import numpy as np
import pytest

from robust_triangulation import RansacConfig, Status, generate_scene, triangulate
from robust_triangulation.bench import (
    METHODS,
    RECORD_FIELDS,
    compare_optimizers,
    prune_by_uncertainty,
    read_rows,
    run_benchmark,
    spec_config,
)
from robust_triangulation.uncertainty import learn_grid


@pytest.fixture(scope="module")
def small_grid():
    spec = [{"n": n, "d": [2.0, 10.0], "sigma": [0.0, 4.0], "outlier_ratio": 0.0, "runs": 200}
            for n in (3, 10)]
    return learn_grid(spec, 0, min_count=3)


def test_noiseless_methods_are_exact():
    spec = {"configs": [{"n": 8, "d": 4.0, "sigma": 0.0, "runs": 5}], "methods": list(METHODS),
            "ransac": {"min_parallax_deg": 0.0}}
    report = run_benchmark(spec, seed=1)
    assert len(report.records) == 5 * len(METHODS)
    for r in report.records:
        assert r["status"] == Status.OK.value
        assert r["err3d"] < 1e-9
        assert r["recall"] == 1.0 and r["precision"] == 1.0


def test_csv_is_deterministic(tmp_path):
    spec = [{"n": 10, "d": 5.0, "sigma": 2.0, "outlier_ratio": 0.4, "runs": 8}]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_benchmark(spec, ["ransac+gn", "baseline"], seed=4).write_csv(a)
    run_benchmark(spec, ["ransac+gn", "baseline"], seed=4).write_csv(b)
    assert a.read_bytes() == b.read_bytes()
    run_benchmark(spec, ["ransac+gn", "baseline"], seed=5).write_csv(b)
    assert a.read_bytes() != b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header == list(RECORD_FIELDS)
    assert "wall_s" not in header


def test_methods_share_the_scene():
    spec = [{"n": 12, "d": 3.0, "sigma": 1.0, "outlier_ratio": 0.3, "runs": 3}]
    alone = run_benchmark(spec, ["ransac"], seed=2).records
    paired = run_benchmark(spec, ["baseline", "ransac"], seed=2).select("ransac")
    for a, b in zip(alone, paired):
        assert a["err3d"] == b["err3d"]
        assert a["n_true_inliers"] == b["n_true_inliers"]


def test_precision_and_recall_are_recomputable():
    spec = [{"n": 15, "d": 4.0, "sigma": 3.0, "outlier_ratio": 0.5, "runs": 10}]
    report = run_benchmark(spec, ["ransac+gn"], seed=7, keep_scenes=True)
    for rec, scene in zip(report.records, report.scenes):
        truth = set(np.flatnonzero(~scene.outlier_mask).tolist())
        assert rec["n_true_inliers"] == len(truth)
        # replay the run's stream: scene first, then the RANSAC seed
        rng = np.random.default_rng([7, 0, rec["run"]])
        generate_scene(15, 4.0, 3.0, 0.5, rng)
        cfg = RansacConfig(seed=int(rng.integers(2**63)), refiner="gn")
        found = set(triangulate(scene.problem(), cfg).inliers)
        hit = len(found & truth)
        assert rec["precision"] == pytest.approx(hit / len(found) if found else 0.0)
        assert rec["recall"] == pytest.approx(hit / len(truth))


def test_error_grows_with_distance():
    spec = [{"n": 20, "d": d, "sigma": 2.0, "outlier_ratio": 0.2, "runs": 40} for d in (3.0, 9.0)]
    report = run_benchmark(spec, ["ransac+gn"], seed=3)
    assert np.median(report.column("err3d", config=1)) > np.median(report.column("err3d", config=0))
    summary = report.summary()
    assert [row["config"] for row in summary] == [0, 1]
    assert summary[1]["err3d_p50"] == pytest.approx(np.median(report.column("err3d", config=1)))


def test_prune_extremes(small_grid):
    spec = [{"n": 10, "d": 5.0, "sigma": 2.0, "outlier_ratio": 0.3, "runs": 20}]
    records = run_benchmark(spec, ["ransac+gn"], seed=0, grid=small_grid).records
    kept, curve = prune_by_uncertainty(records, small_grid, math.inf)
    assert len(kept) == sum(r["n_inliers"] >= 2 for r in records)
    kept, _ = prune_by_uncertainty(records, small_grid, 0.0)
    assert kept == []
    retained = [row["retained"] for row in curve]
    assert retained == sorted(retained, reverse=True)
    assert curve[0]["threshold"] == math.inf


def test_prune_recomputes_sigma_from_grid(small_grid):
    spec = [{"n": 10, "d": 5.0, "sigma": 2.0, "outlier_ratio": 0.3, "runs": 10}]
    with_grid = run_benchmark(spec, ["ransac+gn"], seed=0, grid=small_grid).records
    without = run_benchmark(spec, ["ransac+gn"], seed=0).records
    assert all(math.isinf(r["sigma3d"]) for r in without)
    kept, _ = prune_by_uncertainty(without, small_grid, math.inf)
    assert [r["sigma3d"] for r in kept] == [r["sigma3d"] for r in with_grid if r["n_inliers"] >= 2]


def test_prune_max_mean_error_filter(small_grid):
    spec = [{"n": 10, "d": 5.0, "sigma": 4.0, "outlier_ratio": 0.3, "runs": 20}]
    records = run_benchmark(spec, ["ransac+gn"], seed=0, grid=small_grid).records
    kept, curve = prune_by_uncertainty(records, small_grid, math.inf, max_mean_e2d=3.0)
    assert all(r["mean_e2d"] < 3.0 for r in kept)
    assert curve[0]["retained"] == sum(r["mean_e2d"] < 3.0 for r in records)


def test_csv_round_trip(tmp_path):
    spec = [{"n": 6, "d": 3.0, "sigma": 1.0, "outlier_ratio": 0.0, "runs": 3}]
    report = run_benchmark(spec, ["ransac+gn"], seed=0)
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = read_rows(path)
    for a, b in zip(rows, report.records):
        assert a["err3d"] == b["err3d"]
        assert a["status"] == b["status"]


def test_compare_optimizers_rows():
    spec = [{"n": 12, "d": 5.0, "sigma": 2.0, "outlier_ratio": 0.2, "runs": 10}]
    rows = compare_optimizers(spec, seed=1)
    assert len(rows) == 10
    for r in rows:
        assert r["delta_e2d"] == r["mean_e2d_dlt"] - r["mean_e2d_gn"]


def test_spec_overrides_and_validation():
    cfg = spec_config({"ransac": {"min_parallax_deg": 0.0, "delta_2d": 5.0}})
    assert cfg.delta_upper == 1.0 and cfg.delta_2d == 5.0
    with pytest.raises(ValueError):
        run_benchmark([], seed=0)
    with pytest.raises(ValueError):
        run_benchmark([{"n": 4, "d": 2.0, "sigma": 0.0, "runs": 1}], ["ransac+lm"])
