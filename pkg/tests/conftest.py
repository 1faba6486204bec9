import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from robust_triangulation import Observation, TriangulationProblem, build_view

ACCEPTANCE_FILE = "test_acceptance.py"
_criteria = {}


def random_view(rng, view_id=0, skew=True):
    """Camera with random intrinsics (optionally skewed) and a random pose."""
    fx, fy = rng.uniform(300, 900, 2)
    K = [[fx, rng.uniform(-5, 5) if skew else 0.0, rng.uniform(200, 400)],
         [0.0, fy, rng.uniform(150, 300)],
         [0.0, 0.0, 1.0]]
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.uniform(-2, 2, 3)
    return build_view(view_id, K, R, t)


def look_at_view(view_id, center, target=(0.0, 0.0, 0.0), K=None):
    """Camera at ``center`` whose optical axis passes through ``target``."""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    if K is None:
        K = [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]]
    return build_view(view_id, K, R, -R @ center)


def project(view, x):
    xc = view.R @ np.asarray(x, dtype=float) + view.t
    h = view.K @ xc
    return h[:2] / h[2]


def make_problem(views, x, offsets=None):
    obs = []
    for i, v in enumerate(views):
        u = project(v, x)
        if offsets is not None:
            u = u + np.asarray(offsets[i], dtype=float)
        obs.append(Observation(v.id, u))
    return TriangulationProblem(views, obs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        outcome, detail = _criteria[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
