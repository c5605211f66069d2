import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from dscheme.hexmesh import Material, cell_from_vertices

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

UNIT_CUBE = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], dtype=float)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_hex_vertices(rng, amp=0.15):
    """Valid, generally non-planar hexahedron: perturbed, rotated and scaled unit cube."""
    v = UNIT_CUBE + rng.uniform(-amp, amp, size=(8, 3))
    scale = rng.uniform(0.5, 2.0, size=3)
    return (v * scale) @ random_rotation(rng).T + rng.uniform(-5, 5, size=3)


def projective_hex_vertices(rng, strength=0.2):
    """Planar-faced hexahedron: a projective image of the unit cube."""
    A = np.eye(3) + rng.uniform(-0.3, 0.3, size=(3, 3))
    p = rng.uniform(-strength, strength, size=3)
    hom = UNIT_CUBE @ A.T
    w = 1.0 + UNIT_CUBE @ p
    return hom / w[:, None] + rng.uniform(-2, 2, size=3)


def random_cell(rng, amp=0.15, material=None):
    return cell_from_vertices(random_hex_vertices(rng, amp), material or Material())


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the acceptance summary and return the verdict."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
