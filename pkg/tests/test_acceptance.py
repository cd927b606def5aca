"""End-to-end acceptance checks.

Every check prints one ``criterion N: PASS|FAIL`` line (collected in the
terminal summary) and then asserts. Tolerances and seeds are fixed here and
were not tuned after seeing results.
"""

import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import spearmanr

from conftest import (ACCEPTANCE_LINES, crossing_number, edge_distance, fibonacci_quaternions,
                      quaternions_to_matrices)
from sim3cal import experiments as ex
from sim3cal.cost import (PointToLine, PointToPlane, PointToPoint, assemble_quadratic,
                          mean_abs_p2p, p2p_cost, plane_quadratic)
from sim3cal.errors import ConvergenceWarning, NotCertified, ScaleUnidentifiable
from sim3cal.liegroup import (Rotation, SimilarityTransform, cartesian_to_spherical, compose,
                              inverse, spherical_to_cartesian)
from sim3cal.parsing import PerRing, estimate_targets_l1, parse, weighted_plane_fit
from sim3cal.scene import (PlanarTarget, Scene, degenerate_three_target_scene,
                           make_tetrahedron_scene, validation_scene)
from sim3cal.sdp import solve_se3_global
from sim3cal.simulator import (Sim3Perturbation, lidar_from_id, random_bl1_perturbation,
                               random_bl2_perturbation, random_sim3_perturbation, scan_spinning,
                               winding_numbers)
from sim3cal.solvers import (alternate_refine, scale_profile, solve_baseline,
                             solve_sim3_collection, solve_sim3_global)

pytestmark = pytest.mark.slow

# pinned tolerances
MIN_REDUCTION = 0.40
MIN_REMOVED = 0.95
MAX_ABS_R = 0.30
MAX_SIM3_VARIATION = 0.25
MIN_BASELINE_SPEARMAN = 0.9
FLAT_TOL = 1e-9
UNIQUE_TOL = 1e-5
GAP_TOL = 1e-6
RECOVERY_TOL = 1e-6
BASELINE_TOL = 1e-4
ROUND_TRIP_TOL = 1e-12
SCHUR_TOL = 1e-8
GROUP_TOL = 1e-12
ALT_RATIO = 2.0
ALT_SLACK = 1e-9
ALT_DELTA = 1e-5


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def lidar32():
    return lidar_from_id("spinning32")


# -- 1 --------------------------------------------------------------------------------


def test_criterion_1_tetrahedron_calibration():
    t0 = time.perf_counter()
    run = ex.tetrahedron_run(0)
    dt = time.perf_counter() - t0
    red, rem = run["reduction"]["sim3"], run["removed_fraction"]
    ok = red >= MIN_REDUCTION and rem >= MIN_REMOVED and dt <= 300
    report(1, ok, f"reduction {100 * red:.2f}%, removed {100 * rem:.2f}% of injected "
                  f"displacement, {dt:.1f} s")
    assert ok


# -- 2 --------------------------------------------------------------------------------


def test_criterion_2_orientation_insensitivity():
    t0 = time.perf_counter()
    rows = ex.sweep_orientation(200, 0)
    dt = time.perf_counter() - t0
    s = ex.orientation_summary(rows)
    ok = abs(s["pearson_r"]) <= MAX_ABS_R and s["min_reduction"] >= MIN_REDUCTION and dt <= 1800
    report(2, ok, f"{s['runs']} orientations, r = {s['pearson_r']:.3f} "
                  f"(log10 condition: {s['pearson_r_log10']:.3f}), min reduction "
                  f"{100 * s['min_reduction']:.2f}%, mean {100 * s['mean_reduction']:.2f}%, "
                  f"{dt:.0f} s")
    assert ok


# -- 3 --------------------------------------------------------------------------------


def test_criterion_3_systematic_noise_robustness():
    rows = ex.sweep_noise(1)
    t = ex.noise_table(rows)
    sim3 = np.array(t["sim3"])
    unc = np.array(t["uncalibrated"])
    variation = float(sim3.max() / sim3.min() - 1.0)
    unc_monotone = bool(np.all(np.diff(unc) > 0))
    grows = {}
    for m in ("bl1", "bl2"):
        rho = spearmanr(t["levels"], t[m]).statistic
        grows[m] = (float(rho), bool(t[m][-1] > t[m][0] and rho >= MIN_BASELINE_SPEARMAN))
    ok = variation <= MAX_SIM3_VARIATION and unc_monotone and all(g[1] for g in grows.values())
    report(3, ok, f"Sim3 variation {100 * variation:.2f}%, uncalibrated monotone {unc_monotone}, "
                  f"BL1 rho {grows['bl1'][0]:.2f}, BL2 rho {grows['bl2'][0]:.2f}; "
                  f"uncal {unc[0]:.4g}->{unc[-1]:.4g}, sim3 {sim3.min():.4g}..{sim3.max():.4g}, "
                  f"bl1 {t['bl1'][0]:.4g}->{t['bl1'][-1]:.4g}, "
                  f"bl2 {t['bl2'][0]:.4g}->{t['bl2'][-1]:.4g}")
    assert ok


# -- 4 --------------------------------------------------------------------------------


def test_criterion_4_solid_state_opa():
    t0 = time.perf_counter()
    run = ex.opa_run(0)
    dt = time.perf_counter() - t0
    ok = run["reduction"] >= MIN_REDUCTION and run["collections"] == 80 and dt <= 300
    report(4, ok, f"reduction {100 * run['reduction']:.2f}% over {run['collections']} "
                  f"grid models, {dt:.1f} s")
    assert ok


# -- 5 --------------------------------------------------------------------------------


def test_criterion_5_degeneracy_and_uniqueness(lidar32):
    scene, _ = degenerate_three_target_scene(lidar=lidar_from_id("spinning1"))
    truth = Sim3Perturbation({0: SimilarityTransform(
        1.03, Rotation.from_axis_angle([0, 0, 1], 0.01), [0.01, 0.02, 0.0])})
    r = scan_spinning(scene, perturbation=truth)
    f = scale_profile(r.points, r.target_id, scene.targets, np.linspace(0.9, 1.1, 41))
    flat = float(f.max() - f.min())
    try:
        solve_sim3_collection(r.points, r.target_id, scene.targets)
        flagged = False
    except ScaleUnidentifiable:
        flagged = True

    tetra = make_tetrahedron_scene(lidar=lidar32)
    pert = random_sim3_perturbation(range(32), np.random.default_rng(5), (0.9, 1.1))
    tr = scan_spinning(tetra, lidar32, perturbation=pert, rng_seed=6, range_sigma=0.002)
    rng = np.random.default_rng(7)
    spread = 0.0
    for k in (0, 11, 27):
        sel = tr.collection_id == k
        sols = []
        for _ in range(10):
            warm = (Rotation.random(rng).m, None)
            out = solve_sim3_collection(tr.points[sel], tr.target_id[sel], tetra.targets,
                                        s_init=rng.uniform(0.8, 1.2), warm_start=warm)
            sols.append(out["transform"])
        spread = max(spread, max(a.distance(b) for a in sols for b in sols))
    ok = flat <= FLAT_TOL and flagged and spread <= UNIQUE_TOL
    report(5, ok, f"degenerate profile range {flat:.2e}, ScaleUnidentifiable raised {flagged}; "
                  f"tetrahedron max pairwise distance over 10 inits {spread:.2e}")
    assert ok


# -- 6 --------------------------------------------------------------------------------


def _random_se3_instance(rng, noiseless: bool):
    n = int(rng.integers(5, 51))
    truth = SimilarityTransform(1.0, Rotation.random(rng), rng.uniform(-2, 2, 3))
    x = rng.standard_normal((n, 3)) * 2
    y = truth.apply(x)
    kernels = []
    for i in range(n):
        # three point kernels keep every instance well posed
        kind = 0 if i < 3 else int(rng.integers(0, 3))
        if kind == 0:
            kernels.append(PointToPoint(y[i]))
        else:
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            # anchor moved within the line / plane so the true point still lies on it
            if kind == 1:
                kernels.append(PointToLine(y[i] + rng.uniform(-1, 1) * d, d))
            else:
                t = np.cross(d, rng.standard_normal(3))
                kernels.append(PointToPlane(d, y[i] + t))
    if not noiseless:
        x = x + 0.05 * rng.standard_normal(x.shape)
    return x, kernels, truth


def test_criterion_6_sdp_soundness():
    mats = quaternions_to_matrices(fibonacci_quaternions(100_000))
    tvec = np.concatenate([mats.transpose(0, 2, 1).reshape(-1, 9), np.ones((len(mats), 1))], 1)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_gap = worst_grid = worst_rot = worst_v = 0.0
    failures = 0
    for i in range(500):
        noiseless = i % 2 == 0
        x, ks, truth = _random_se3_instance(rng, noiseless)
        qf = assemble_quadratic(x, ks)
        try:
            T, cert = solve_se3_global(qf)
        except NotCertified:
            failures += 1
            continue
        gap = cert.duality_gap / (1.0 + abs(cert.primal))
        grid = float(np.einsum("ni,ij,nj->n", tvec, qf.q_tilde, tvec).min())
        worst_gap = max(worst_gap, gap)
        worst_grid = max(worst_grid, (cert.primal - grid) / (1.0 + abs(grid)))
        if noiseless:
            worst_rot = max(worst_rot, T.r.angle_to(truth.r))
            worst_v = max(worst_v, float(np.linalg.norm(T.v - truth.v)))
    dt = time.perf_counter() - t0
    ok = (failures == 0 and worst_gap <= GAP_TOL and worst_grid <= 1e-9
          and max(worst_rot, worst_v) <= RECOVERY_TOL and dt <= 600)
    report(6, ok, f"500 instances, {failures} uncertified, max relative gap {worst_gap:.2e}, "
                  f"max excess over 100k grid {worst_grid:.2e}, noiseless recovery "
                  f"{worst_rot:.2e} rad / {worst_v:.2e} m, {dt:.0f} s")
    assert ok


# -- 7 --------------------------------------------------------------------------------


def test_criterion_7_bisection_matches_dense_grid(lidar32):
    tetra = make_tetrahedron_scene(lidar=lidar32)
    grid = np.linspace(0.8, 1.2, 1001)
    step = grid[1] - grid[0]
    worst = 0.0
    for i in range(50):
        pert = random_sim3_perturbation([i % 32], np.random.default_rng(300 + i), (0.85, 1.15))
        r = scan_spinning(tetra, lidar32, perturbation=pert, rng_seed=400 + i, range_sigma=0.002)
        sel = r.collection_id == i % 32
        pts, tid = r.points[sel], r.target_id[sel]
        s_bis = solve_sim3_collection(pts, tid, tetra.targets)["transform"].s
        f = scale_profile(pts, tid, tetra.targets, grid)
        worst = max(worst, abs(s_bis - grid[np.argmin(f)]))
    ok = worst <= step
    report(7, ok, f"50 instances, max |s_bisection - s_grid| {worst:.2e} (grid step {step:.0e})")
    assert ok


# -- 8 --------------------------------------------------------------------------------


def _param_error(res, truth):
    return max(np.abs(res.transforms[k].as_array() - truth.params[k].as_array()).max()
               for k in res.transforms)


def test_criterion_8_baseline_round_trips(lidar32):
    wall = PlanarTarget.square(np.array([0, 3.0, 0]), np.array([0.2, -1, 0.1]), 6.0)
    single = Scene((wall,), lidar32)
    tetra = make_tetrahedron_scene(lidar=lidar32)
    t1 = random_bl1_perturbation(lidar32, np.random.default_rng(81))
    r1 = scan_spinning(single, lidar32, perturbation=t1)
    e1 = _param_error(solve_baseline("bl1", parse(r1, PerRing()), single.targets), t1)
    t2 = random_bl2_perturbation(lidar32, np.random.default_rng(82))
    r2 = scan_spinning(tetra, lidar32, perturbation=t2)
    res2 = solve_baseline("bl2", parse(r2, PerRing()), tetra.targets)
    e2 = _param_error(res2, t2)
    t3 = random_bl2_perturbation(lidar32, np.random.default_rng(83))
    r3 = scan_spinning(single, lidar32, perturbation=t3)
    st3 = set(solve_baseline("bl2", parse(r3, PerRing()), single.targets).status.values())
    ok = e1 <= BASELINE_TOL and e2 <= BASELINE_TOL and st3 == {"non_unique"}
    report(8, ok, f"BL1 single-target error {e1:.2e}, BL2 tetrahedron error {e2:.2e}, "
                  f"BL2 single-target statuses {sorted(st3)}")
    assert ok


# -- 9 --------------------------------------------------------------------------------


def _star(rng, n=9):
    ang = np.sort(rng.uniform(0, 2 * np.pi, 2 * n))
    rad = np.where(np.arange(2 * n) % 2 == 0, 1.0, 0.4) * rng.uniform(0.8, 1.0, 2 * n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], 1)


def test_criterion_9_micro_oracles():
    rng = np.random.default_rng(99)
    # spherical round trip
    x = rng.uniform(-50, 50, (100_000, 3))
    back = spherical_to_cartesian(*np.moveaxis(cartesian_to_spherical(x), -1, 0))
    sph = float(np.abs(back - x).max())
    # winding vs crossing number
    poly = _star(rng)
    pts = rng.uniform(-1.1, 1.1, (10_000, 2))
    wn = winding_numbers(pts, poly)
    mism = sum(1 for p, w in zip(pts, wn)
               if (w != 0) != bool(crossing_number(p, poly)) and edge_distance(p, poly) > 1e-9)
    # Schur complement vs numeric minimum over translation
    schur = 0.0
    for _ in range(20):
        nrm = rng.standard_normal((5, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        targets = [PlanarTarget.square(-rng.uniform(2, 5) * n, n, 2.0) for n in nrm]
        tid = rng.integers(0, 5, 30)
        p = rng.standard_normal((30, 3)) * 2
        s = rng.uniform(0.8, 1.2)
        R = Rotation.random(rng)
        qf = plane_quadratic(s * p, tid, targets)
        brute = minimize(lambda v: p2p_cost(SimilarityTransform(s, R, v), p, tid, targets),
                         np.zeros(3), method="BFGS", options={"gtol": 1e-12}).fun
        schur = max(schur, abs(qf.cost(R.m) - brute) / max(1.0, brute))
    # group axioms
    grp = 0.0
    e = SimilarityTransform.identity()
    for _ in range(1000):
        a, b, c = (SimilarityTransform(rng.uniform(0.5, 2), Rotation.random(rng),
                                       rng.uniform(-2, 2, 3)) for _ in range(3))
        left = compose(compose(a, b), c).matrix()
        right = compose(a, compose(b, c)).matrix()
        grp = max(grp, np.abs(left - right).max() / max(1.0, np.abs(left).max()),
                  np.abs(compose(a, e).matrix() - a.matrix()).max(),
                  np.abs(compose(a, inverse(a)).matrix() - np.eye(4)).max(),
                  np.abs(compose(inverse(a), a).matrix() - np.eye(4)).max())
    ok = sph <= ROUND_TRIP_TOL and mism == 0 and schur <= SCHUR_TOL and grp <= GROUP_TOL
    report(9, ok, f"spherical round trip {sph:.1e}, winding/crossing mismatches {mism}, "
                  f"Schur vs numeric {schur:.1e}, group axioms {grp:.1e}")
    assert ok


# -- 10 -------------------------------------------------------------------------------


def test_criterion_10_alternating_refinement():
    # data exactly as in tetrahedron_run(0)
    cfg = ex.TetraConfig()
    s_pert, s_train, s_val, _, _ = ex._seeds(0, 5)
    lid = lidar_from_id(cfg.lidar)
    scene = make_tetrahedron_scene(cfg.radius, lidar=lid)
    pert = random_sim3_perturbation(range(lid.beam_count), np.random.default_rng(s_pert),
                                    cfg.scale_range, cfg.max_angle_deg, cfg.max_translation)
    train = scan_spinning(scene, lid, cfg.scans, pert, s_train, cfg.range_sigma)
    vscene = validation_scene(cfg.validation_targets, cfg.validation_seed, lid)
    val = scan_spinning(vscene, lid, 1, pert, s_val, cfg.range_sigma)

    def validation(res):
        cal = res.apply(val)
        raw = mean_abs_p2p(None, cal.points, cal.target_id, vscene.targets)
        # the common similarity frame is not observable from estimated planes,
        # so both pipelines are compared after one global Sim(3) alignment
        g = solve_sim3_collection(cal.points, cal.target_id, vscene.targets)["transform"]
        return raw, mean_abs_p2p(g, cal.points, cal.target_id, vscene.targets)

    oracle = solve_sim3_global(parse(train, PerRing()), scene.targets)
    oracle.scheme = PerRing()
    o_raw, o_al = validation(oracle)
    est = [weighted_plane_fit(train.points[train.target_id == t], "uniform")
           for t in range(len(scene.targets))]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        res = alternate_refine(train, est, max_iter=50)
    e_raw, e_al = validation(res)
    costs = [h["training_cost"] for h in res.history]
    monotone = all(b <= a + ALT_SLACK for a, b in zip(costs, costs[1:]))
    delta = res.history[-1]["delta_m"]
    stalled = any(issubclass(w.category, ConvergenceWarning) for w in caught)
    ratio = e_al / o_al
    ok = ratio <= ALT_RATIO and monotone and delta < ALT_DELTA and not stalled
    report(10, ok, f"aligned validation {1e3 * e_al:.3f} mm vs oracle {1e3 * o_al:.3f} mm "
                   f"(ratio {ratio:.2f}; unaligned {1e3 * e_raw:.2f} vs {1e3 * o_raw:.2f} mm), "
                   f"{len(costs)} iterations, cost non-increasing {monotone}, "
                   f"final delta_m {delta:.1e}")
    assert ok
