import numpy as np
import pytest

from jawdrive.geomcore import UnitQuaternion
from jawdrive.rig import wedge_rig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def wedge():
    return wedge_rig()


def random_quat(rng) -> UnitQuaternion:
    return UnitQuaternion(*rng.standard_normal(4))


def random_rotation(rng) -> np.ndarray:
    # QR of a Gaussian matrix, sign-fixed to a proper rotation; independent of quaternion code
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rodrigues(axis, angle) -> np.ndarray:
    """Axis-angle rotation matrix, written out independently of the package."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, line = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
