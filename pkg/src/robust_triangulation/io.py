"""Text formats: cameras, tracks, ASCII PLY points and uncertainty grid files.

Cameras file, one view per line::

    view_id  K(9, row-major)  R(9, row-major)  t(3)

Tracks file, one point per line::

    point_id  view_id u v  [view_id u v ...]

Blank lines and anything after ``#`` are ignored.
"""

from __future__ import annotations

import json
import logging
import math

import numpy as np

from .errors import DatasetError, NonMonotoneGrid, ShapeMismatch, VersionMismatch
from .geometry import build_view
from .uncertainty import UncertaintyGrid

log = logging.getLogger(__name__)

GRID_FORMAT_VERSION = 1


def _records(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split("#", 1)[0].split()
            if fields:
                yield lineno, fields


def read_cameras(path) -> dict:
    """Parse a cameras file into ``{view_id: CameraView}``."""
    views = {}
    for lineno, f in _records(path):
        if len(f) != 22:
            raise DatasetError(f"expected 22 fields (id, K, R, t), got {len(f)}", path, lineno)
        try:
            vid = int(f[0])
            vals = np.array([float(v) for v in f[1:]])
        except ValueError as exc:
            raise DatasetError(f"bad number: {exc}", path, lineno) from None
        if vid in views:
            raise DatasetError(f"duplicate view id {vid}", path, lineno)
        try:
            views[vid] = build_view(vid, vals[:9].reshape(3, 3), vals[9:18].reshape(3, 3),
                                    vals[18:])
        except ValueError as exc:
            raise DatasetError(str(exc), path, lineno) from None
    return views


def read_tracks(path, views: dict, min_views: int = 2) -> list:
    """Parse a tracks file into ``[(point_id, [(view_id, (u, v)), ...]), ...]``.

    Tracks with fewer than ``min_views`` observations are skipped with a warning.
    """
    tracks = []
    for lineno, f in _records(path):
        if len(f) < 1 or (len(f) - 1) % 3:
            raise DatasetError("expected point id followed by (view u v) triples", path, lineno)
        try:
            pid = int(f[0])
            obs = [(int(f[i]), (float(f[i + 1]), float(f[i + 2])))
                   for i in range(1, len(f), 3)]
        except ValueError as exc:
            raise DatasetError(f"bad number: {exc}", path, lineno) from None
        seen = set()
        for vid, uv in obs:
            if vid not in views:
                raise DatasetError(f"point {pid} references unknown view id {vid}", path, lineno)
            if vid in seen:
                raise DatasetError(f"point {pid} observed twice in view {vid}", path, lineno)
            if not all(math.isfinite(c) for c in uv):
                raise DatasetError(f"point {pid} has a non-finite observation", path, lineno)
            seen.add(vid)
        if len(obs) < min_views:
            log.warning("skipping point %d (line %d): %d view(s) < %d",
                        pid, lineno, len(obs), min_views)
            continue
        tracks.append((pid, obs))
    return tracks


def write_cameras(path, views) -> None:
    with open(path, "w") as fh:
        for v in views:
            vals = np.concatenate([v.K.ravel(), v.R.ravel(), v.t])
            fh.write(f"{v.id} " + " ".join(repr(float(x)) for x in vals) + "\n")


def write_tracks(path, tracks) -> None:
    with open(path, "w") as fh:
        for pid, obs in tracks:
            parts = [str(pid)]
            for vid, (u, v) in obs:
                parts += [str(vid), repr(float(u)), repr(float(v))]
            fh.write(" ".join(parts) + "\n")


PLY_PROPERTIES = (("x", "double"), ("y", "double"), ("z", "double"),
                  ("sigma3d", "double"), ("mean_e2d", "double"), ("n_inliers", "int"))


def write_ply(path, points) -> None:
    """ASCII PLY with one vertex per ``(x, y, z, sigma3d, mean_e2d, n_inliers)`` row.

    Floats are written with ``repr`` so parsing them back is bit-exact.
    """
    points = list(points)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        for name, kind in PLY_PROPERTIES:
            fh.write(f"property {kind} {name}\n")
        fh.write("end_header\n")
        for x, y, z, s, e, k in points:
            floats = " ".join(repr(float(v)) for v in (x, y, z, s, e))
            fh.write(f"{floats} {int(np.int32(k))}\n")


def read_ply(path) -> list:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise DatasetError("not a PLY file", path, 1)
    count, props, i = None, [], 1
    while i < len(lines) and lines[i] != "end_header":
        f = lines[i].split()
        if f[:2] == ["element", "vertex"]:
            count = int(f[2])
        elif f and f[0] == "property":
            props.append(f[2])
        i += 1
    if count is None or i == len(lines):
        raise DatasetError("incomplete PLY header", path, i + 1)
    body = lines[i + 1:i + 1 + count]
    if len(body) != count:
        raise DatasetError(f"header declares {count} vertices, found {len(body)}", path)
    out = []
    for row in body:
        f = row.split()
        out.append(tuple(float(v) for v in f[:-1]) + (int(f[-1]),))
    return out


def _grid_header(grid: UncertaintyGrid) -> dict:
    meta = dict(grid.meta)
    return {
        "format_version": GRID_FORMAT_VERSION,
        "n_axis": [int(n) for n in grid.n_axis],
        "e_axis": {"min": float(grid.e_range[0]), "max": float(grid.e_range[1]),
                   "bins": int(grid.e_bins)},
        "beta_axis": {"min": float(grid.beta_range[0]), "max": float(grid.beta_range[1]),
                      "bins": int(grid.beta_bins)},
        "smoothed": grid.smoothed,
        "smoothing": meta.pop("smoothing", None),
        "sim": meta.pop("sim", None),
        "seed": meta.pop("seed", None),
        "meta": meta,
    }


def write_grid(path, grid: UncertaintyGrid) -> None:
    """One JSON header line, then ``sigma`` and ``counts`` one value per line.

    Arrays are flattened n-major, then error, then parallax (C order).
    """
    with open(path, "w") as fh:
        fh.write(json.dumps(_grid_header(grid), sort_keys=True) + "\n")
        fh.write("sigma\n")
        fh.writelines(repr(float(v)) + "\n" for v in grid.sigma.ravel())
        fh.write("counts\n")
        fh.writelines(f"{int(v)}\n" for v in grid.counts.ravel())


def read_grid(path) -> UncertaintyGrid:
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        header = json.loads(lines[0]) if lines else {}
    except json.JSONDecodeError as exc:
        raise VersionMismatch(f"unreadable grid header: {exc}") from None
    version = header.get("format_version")
    if version != GRID_FORMAT_VERSION:
        raise VersionMismatch(
            f"grid format version {version!r}, this reader handles {GRID_FORMAT_VERSION}"
        )
    e, b = header["e_axis"], header["beta_axis"]
    n_axis = np.array(header["n_axis"], dtype=int)
    shape = (len(n_axis), int(e["bins"]), int(b["bins"]))
    size = int(np.prod(shape))

    sections = {"sigma": [], "counts": []}
    current = None
    for line in lines[1:]:
        line = line.strip()
        if line in sections:
            current = sections[line]
        elif line and current is not None:
            current.append(line)
    for key, values in sections.items():
        if len(values) != size:
            raise ShapeMismatch(
                f"{key}: expected {size} elements for shape {shape}, found {len(values)}"
            )

    meta = dict(header.get("meta", {}))
    meta["smoothed"] = bool(header.get("smoothed", False))
    for key in ("smoothing", "sim", "seed"):
        if header.get(key) is not None:
            meta[key] = header[key]
    grid = UncertaintyGrid(
        n_axis=n_axis, e_range=(float(e["min"]), float(e["max"])), e_bins=shape[1],
        beta_range=(float(b["min"]), float(b["max"])), beta_bins=shape[2],
        sigma=np.array([float(v) for v in sections["sigma"]]).reshape(shape),
        counts=np.array([int(v) for v in sections["counts"]], dtype=np.int64).reshape(shape),
        meta=meta,
    )
    if grid.smoothed and not grid.is_monotone():
        raise NonMonotoneGrid(
            f"grid claims to be smoothed but has {grid.monotonicity_violations()} "
            "monotonicity violation(s) or empty cells"
        )
    return grid
