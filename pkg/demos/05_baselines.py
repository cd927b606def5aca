"""The spherical baseline models next to the similarity model.

BL1 (range, elevation and azimuth offsets) is identifiable from one flat wall.
BL2 adds a range scale and two offsets of the beam origin; on one wall that
extra freedom is not determined and the solver says so.

Run: python3 demos/05_baselines.py
"""

import numpy as np

from sim3cal.parsing import PerRing, parse
from sim3cal.scene import PlanarTarget, Scene, make_tetrahedron_scene
from sim3cal.simulator import (lidar_from_id, random_bl1_perturbation, random_bl2_perturbation,
                               scan_spinning)
from sim3cal.solvers import solve_baseline

lidar = lidar_from_id("spinning32")
wall = Scene((PlanarTarget.square(np.array([0, 3.0, 0]), np.array([0.2, -1, 0.1]), 6.0),), lidar)
tetra = make_tetrahedron_scene(lidar=lidar)


def worst_error(res, truth):
    return max(np.abs(res.transforms[k].as_array() - truth.params[k].as_array()).max()
               for k in res.transforms)


t1 = random_bl1_perturbation(lidar, np.random.default_rng(1))
res = solve_baseline("bl1", parse(scan_spinning(wall, lidar, perturbation=t1), PerRing()),
                     wall.targets)
print(f"BL1, one wall: worst parameter error {worst_error(res, t1):.1e}")

t2 = random_bl2_perturbation(lidar, np.random.default_rng(2))
res = solve_baseline("bl2", parse(scan_spinning(tetra, lidar, perturbation=t2), PerRing()),
                     tetra.targets)
print(f"BL2, tetrahedron: worst parameter error {worst_error(res, t2):.1e}")

res = solve_baseline("bl2", parse(scan_spinning(wall, lidar, perturbation=t2), PerRing()),
                     wall.targets)
print(f"BL2, one wall: statuses {sorted(set(res.status.values()))}")
