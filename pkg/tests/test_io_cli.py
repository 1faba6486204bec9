import csv
import json
import logging
import math

import numpy as np
import pytest

from robust_triangulation import io
from robust_triangulation.cli import main
from robust_triangulation.errors import (
    DatasetError,
    NonMonotoneGrid,
    ShapeMismatch,
    VersionMismatch,
)
from robust_triangulation.uncertainty import UncertaintyGrid, learn_grid


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_ply_empty_set(tmp_path):
    path = tmp_path / "empty.ply"
    io.write_ply(path, [])
    text = path.read_text()
    assert "element vertex 0\n" in text
    assert text.endswith("end_header\n")
    assert io.read_ply(path) == []


def test_ply_single_point_echo(tmp_path):
    path = tmp_path / "one.ply"
    io.write_ply(path, [(0.0, 0.0, 2.0, 0.01, 0.5, 5)])
    assert path.read_text().splitlines()[-1] == "0.0 0.0 2.0 0.01 0.5 5"
    assert io.read_ply(path) == [(0.0, 0.0, 2.0, 0.01, 0.5, 5)]


def test_ply_round_trip_is_bit_exact(tmp_path, rng):
    pts = [(*rng.normal(0, 10, 3), rng.random(), rng.random() * 5, int(rng.integers(2, 100)))
           for _ in range(50)]
    pts.append((1e-300, -0.0, 1 / 3, math.inf, 7.0, 2))
    path = tmp_path / "p.ply"
    io.write_ply(path, pts)
    back = io.read_ply(path)
    for a, b in zip(pts, back):
        assert all(float(x).hex() == float(y).hex() for x, y in zip(a[:5], b[:5]))
        assert a[5] == b[5]


@pytest.fixture(scope="module")
def learned_grid():
    spec = [{"n": 5, "d": [2.0, 8.0], "sigma": [0.0, 5.0], "runs": 200}]
    return learn_grid(spec, 2, n_axis=[2, 5, 10], min_count=3)


def test_grid_round_trip(tmp_path, learned_grid):
    path = tmp_path / "g.txt"
    io.write_grid(path, learned_grid)
    g = io.read_grid(path)
    assert np.array_equal(g.sigma, learned_grid.sigma)
    assert np.array_equal(g.counts, learned_grid.counts)
    assert np.array_equal(g.n_axis, learned_grid.n_axis)
    assert g.smoothed and g.meta["seed"] == 2 and g.meta["smoothing"]
    header = json.loads(path.read_text().splitlines()[0])
    assert header["format_version"] == io.GRID_FORMAT_VERSION


def test_grid_truncated(tmp_path, learned_grid):
    path = tmp_path / "g.txt"
    io.write_grid(path, learned_grid)
    lines = path.read_text().splitlines()
    cut = lines.index("counts") - 5
    path.write_text("\n".join(lines[:cut] + lines[cut + 1:]) + "\n")
    with pytest.raises(ShapeMismatch, match="expected 1200 elements"):
        io.read_grid(path)


def test_grid_claiming_smoothed_must_be_monotone(tmp_path):
    # more views must not increase the uncertainty
    sigma = np.array([[[0.1, 0.1], [0.2, 0.2]], [[0.3, 0.1], [0.4, 0.2]]])
    grid = UncertaintyGrid(n_axis=np.array([2, 3]), e_range=(0.0, 2.0), e_bins=2,
                           beta_range=(0.0, 2.0), beta_bins=2, sigma=sigma,
                           counts=np.full((2, 2, 2), 10), meta={"smoothed": True})
    path = tmp_path / "bad.txt"
    io.write_grid(path, grid)
    with pytest.raises(NonMonotoneGrid):
        io.read_grid(path)
    grid.meta["smoothed"] = False
    io.write_grid(path, grid)
    assert not io.read_grid(path).smoothed


def test_grid_version_mismatch(tmp_path, learned_grid):
    path = tmp_path / "g.txt"
    io.write_grid(path, learned_grid)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["format_version"] = 99
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(VersionMismatch):
        io.read_grid(path)


def write_dataset(tmp_path, cams, tracks):
    c, t = tmp_path / "cameras.txt", tmp_path / "tracks.txt"
    c.write_text(cams)
    t.write_text(tracks)
    return c, t


CAM0 = "0 500 0 320 0 500 240 0 0 1 1 0 0 0 1 0 0 0 1 0 0 0\n"
CAM1 = "1 500 0 320 0 500 240 0 0 1 1 0 0 0 1 0 0 0 1 -1 0 0\n"


def test_tracks_reader_errors(tmp_path):
    c, t = write_dataset(tmp_path, CAM0 + CAM1, "# comment\n7 0 320 240 5 1 1\n")
    views = io.read_cameras(c)
    with pytest.raises(DatasetError, match="unknown view id 5") as exc:
        io.read_tracks(t, views)
    assert exc.value.line == 2
    t.write_text("7 0 320 240 0 1 1\n")
    with pytest.raises(DatasetError, match="twice"):
        io.read_tracks(t, views)
    t.write_text("7 0 320 240 1 nan 1\n")
    with pytest.raises(DatasetError, match="non-finite"):
        io.read_tracks(t, views)
    c.write_text(CAM0 + "1 2 3\n")
    with pytest.raises(DatasetError) as exc:
        io.read_cameras(c)
    assert exc.value.line == 2


def test_camera_file_round_trip(tmp_path, rng):
    from conftest import random_view

    views = [random_view(rng, i) for i in range(4)]
    path = tmp_path / "c.txt"
    io.write_cameras(path, views)
    back = io.read_cameras(path)
    for v in views:
        assert np.array_equal(back[v.id].K, v.K)
        assert np.array_equal(back[v.id].R, v.R)
        assert np.array_equal(back[v.id].t, v.t)


@pytest.fixture
def dumped_scenes(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"configs": [{"n": 6, "d": 4.0, "sigma": 0.0, "runs": 5}],
                                "ransac": {"min_parallax_deg": 0.0}}))
    out = tmp_path / "bench.csv"
    assert main(["bench", "--spec", str(spec), "--out", str(out),
                 "--dump", str(tmp_path / "ds"), "--summary", str(tmp_path / "sum.csv")]) == 0
    return tmp_path / "ds"


def test_cli_noiseless_round_trip(tmp_path, dumped_scenes):
    ply, report = tmp_path / "pts.ply", tmp_path / "rep.csv"
    code = main(["triangulate", "--cameras", str(dumped_scenes / "cameras.txt"),
                 "--tracks", str(dumped_scenes / "tracks.txt"), "--min-parallax-deg", "0",
                 "--out", str(ply), "--report", str(report)])
    assert code == 0
    truth = read_csv(dumped_scenes / "ground_truth.csv")
    points = io.read_ply(ply)
    assert len(points) == len(truth) == 5
    for p, t in zip(points, truth):
        gt = np.array([float(t["x"]), float(t["y"]), float(t["z"])])
        assert np.linalg.norm(np.array(p[:3]) - gt) < 1e-6
        assert p[5] == 6
    rows = read_csv(report)
    assert [r["status"] for r in rows] == ["Ok"] * 5


def test_cli_min_views_drops_short_tracks(tmp_path, caplog):
    x = np.array([0.2, -0.1, 5.0])
    cams, obs = "", []
    for i, cx in enumerate((-1.0, 0.0, 1.0)):
        cams += f"{i} 500 0 320 0 500 240 0 0 1 1 0 0 0 1 0 0 0 1 {-cx} 0 0\n"
        pc = x - [cx, 0, 0]
        obs.append((float(500 * pc[0] / pc[2] + 320), float(500 * pc[1] / pc[2] + 240)))
    tracks = "1 " + " ".join(f"{i} {u!r} {v!r}" for i, (u, v) in enumerate(obs)) + "\n"
    tracks += "2 " + " ".join(f"{i} {u!r} {v!r}" for i, (u, v) in enumerate(obs[:2])) + "\n"
    c, t = write_dataset(tmp_path, cams, tracks)
    ply, rep = tmp_path / "p.ply", tmp_path / "r.csv"
    with caplog.at_level(logging.WARNING):
        assert main(["triangulate", "--cameras", str(c), "--tracks", str(t),
                     "--out", str(ply), "--report", str(rep)]) == 0
    assert "skipping point 2" in caplog.text
    points = io.read_ply(ply)
    assert len(points) == 1
    assert np.allclose(points[0][:3], x, atol=1e-9)
    assert [r["point_id"] for r in read_csv(rep)] == ["1"]
    # with the threshold lowered both tracks are kept
    assert main(["triangulate", "--cameras", str(c), "--tracks", str(t), "--min-views", "2",
                 "--out", str(ply), "--report", str(rep)]) == 0
    assert len(io.read_ply(ply)) == 2


def test_cli_invalid_dataset_exit_code(tmp_path, capsys):
    c, t = write_dataset(tmp_path, CAM0 + CAM1, "1 0 320 240 1 300 240\n2 0 1 1 4 2 2 1 3 3\n")
    code = main(["triangulate", "--cameras", str(c), "--tracks", str(t),
                 "--out", str(tmp_path / "p.ply"), "--report", str(tmp_path / "r.csv")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "DatasetError"
    assert err["line"] == 2
    assert "unknown view id 4" in err["message"]


def test_cli_help_shows_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["triangulate", "--help"])
    assert exc.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    assert "(default: 10.0)" in text
    assert "(default: 0.99)" in text
    assert "(default: gn)" in text


def test_cli_grid_bench_prune(tmp_path):
    spec = tmp_path / "grid.json"
    spec.write_text(json.dumps([{"n": n, "d": [2.0, 8.0], "sigma": [0.0, 4.0], "runs": 150}
                                for n in (3, 10)]))
    grid = tmp_path / "grid.txt"
    assert main(["learn-grid", "--spec", str(spec), "--out", str(grid), "--min-count", "3"]) == 0
    assert io.read_grid(grid).smoothed

    bspec = tmp_path / "bench.json"
    bspec.write_text(json.dumps([{"n": 8, "d": 4.0, "sigma": 2.0, "outlier_ratio": 0.3,
                                  "runs": 15}]))
    out = tmp_path / "b.csv"
    assert main(["bench", "--spec", str(bspec), "--grid", str(grid), "--out", str(out)]) == 0
    kept, curve = tmp_path / "kept.csv", tmp_path / "curve.csv"
    assert main(["prune", "--points", str(out), "--grid", str(grid), "--delta-3d", "0.05",
                 "--out", str(kept), "--curve", str(curve), "--thresholds", "inf,0.1,0.05"]) == 0
    rows = read_csv(kept)
    assert all(float(r["sigma3d"]) < 0.05 for r in rows)
    assert [float(r["threshold"]) for r in read_csv(curve)] == [math.inf, 0.1, 0.05]

    cmp_out = tmp_path / "cmp.csv"
    assert main(["compare-opt", "--spec", str(bspec), "--out", str(cmp_out)]) == 0
    assert len(read_csv(cmp_out)) == 15


def test_cli_missing_file(tmp_path, capsys):
    code = main(["learn-grid", "--spec", str(tmp_path / "nope.json"), "--out", "x"])
    assert code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"
