"""Shared fixtures and independent reference implementations for the tests."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from sim3cal.liegroup import Rotation, SimilarityTransform
from sim3cal.scene import make_tetrahedron_scene
from sim3cal.simulator import lidar_from_id

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_sim3(rng, s_range=(0.5, 2.0), v_scale=2.0) -> SimilarityTransform:
    return SimilarityTransform(rng.uniform(*s_range), Rotation.random(rng),
                               rng.uniform(-v_scale, v_scale, 3))


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def crossing_number(point, polygon) -> int:
    """Even-odd ray-crossing point-in-polygon test (1 inside, 0 outside)."""
    x, y = point
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return int(inside)


def edge_distance(point, polygon) -> float:
    """Distance from a 2-D point to the polygon boundary."""
    p = np.asarray(point, dtype=float)
    best = np.inf
    for i in range(len(polygon)):
        a, b = np.asarray(polygon[i]), np.asarray(polygon[(i + 1) % len(polygon)])
        t = np.clip((p - a) @ (b - a) / ((b - a) @ (b - a)), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * (b - a)))))
    return best


def fibonacci_quaternions(n: int) -> np.ndarray:
    """Deterministic, near-uniform unit quaternions (super-Fibonacci spiral)."""
    phi = np.sqrt(2.0)
    psi = 1.533751168755204288118041
    i = np.arange(n) + 0.5
    s = i / n
    r = np.sqrt(s)
    R = np.sqrt(1.0 - s)
    alpha = 2 * np.pi * i / phi
    beta = 2 * np.pi * i / psi
    return np.stack([r * np.sin(alpha), r * np.cos(alpha), R * np.sin(beta), R * np.cos(beta)],
                    axis=1)


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for quaternions ``(x, y, z, w)``, shape ``(N, 3, 3)``."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    x, y, z, w = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


@pytest.fixture(scope="session")
def spinning32():
    return lidar_from_id("spinning32")


@pytest.fixture(scope="session")
def tetra_scene(spinning32):
    return make_tetrahedron_scene(lidar=spinning32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ----------------------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
