"""Why three targets are not enough.

Three planes meet in a single point q0. Scaling the whole cloud about q0 maps
every plane onto itself, so the calibration cost has the same value for every
scale and the scale cannot be recovered. A fourth target fixes this.

Run: python3 demos/02_degenerate_scene.py
"""

import numpy as np

from sim3cal.errors import ScaleUnidentifiable
from sim3cal.liegroup import Rotation, SimilarityTransform
from sim3cal.scene import degenerate_three_target_scene, make_tetrahedron_scene
from sim3cal.simulator import Sim3Perturbation, lidar_from_id, scan_spinning
from sim3cal.solvers import scale_profile, solve_sim3_collection

scene, q0 = degenerate_three_target_scene(lidar=lidar_from_id("spinning1"))
print(f"three targets, common point q0 = {(np.round(q0, 9) + 0.0).tolist()}")
truth = Sim3Perturbation({0: SimilarityTransform(
    1.03, Rotation.from_axis_angle([0, 0, 1], 0.01), [0.01, 0.02, 0.0])})
r = scan_spinning(scene, perturbation=truth)

scales = np.linspace(0.9, 1.1, 5)
for s, f in zip(scales, scale_profile(r.points, r.target_id, scene.targets, scales)):
    print(f"  f({s:.2f}) = {f:.3e}")
try:
    solve_sim3_collection(r.points, r.target_id, scene.targets)
except ScaleUnidentifiable as e:
    print(f"solver: {e.args[0]}")

lidar = lidar_from_id("spinning32")
tetra = make_tetrahedron_scene(lidar=lidar)
truth32 = Sim3Perturbation({5: truth.transforms[0]})
r = scan_spinning(tetra, lidar, perturbation=truth32)
sel = r.collection_id == 5
print("four targets:")
for s, f in zip(scales, scale_profile(r.points[sel], r.target_id[sel], tetra.targets, scales)):
    print(f"  f({s:.2f}) = {f:.3e}")
h = solve_sim3_collection(r.points[sel], r.target_id[sel], tetra.targets)["transform"]
print(f"recovered scale {h.s:.6f} (true 1.03)")
