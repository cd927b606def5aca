import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crossing_number, edge_distance, random_sim3
from sim3cal.cost import signed_residuals
from sim3cal.errors import EmptyScene
from sim3cal.models import apply_model
from sim3cal.scene import PlanarTarget, Scene
from sim3cal.simulator import (Bl1Perturbation, Bl2Perturbation, NoPerturbation,
                               Sim3Perturbation, SolidStateOPA, SpinningLidar, SystematicLevel,
                               cast_ray, cast_rays, default_warp, inject_systematic,
                               lidar_from_id, random_bl1_perturbation, random_bl2_perturbation,
                               random_sim3_perturbation, scan_opa, scan_spinning,
                               winding_number, winding_numbers)

UNIT_SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def wall(center, normal, side=1.0):
    return PlanarTarget.square(np.asarray(center, float), np.asarray(normal, float), side)


def star_polygon(rng, n=9):
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.3, 1.0, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def four_wall_scene():
    targets = []
    for az in np.deg2rad([-60, -20, 20, 60]):
        c = 3.0 * np.array([np.sin(az), np.cos(az), 0.0])
        targets.append(wall(c, -c, 1.5))
    return Scene(tuple(targets))


# -- lidar models ---------------------------------------------------------------------


def test_model_invariants():
    with pytest.raises(ValueError):
        SpinningLidar((), 0.01)
    with pytest.raises(ValueError):
        SpinningLidar((0.0,), 0.0)
    with pytest.raises(ValueError):
        SolidStateOPA(hfov_deg=180.0)
    with pytest.raises(ValueError):
        SolidStateOPA(vfov_deg=0.0)
    with pytest.raises(ValueError):
        SolidStateOPA(warp=(((2, 2), 0.1),))
    assert lidar_from_id("spinning32").beam_count == 32


# -- cast_ray -------------------------------------------------------------------------


def test_cast_ray_hits_square_ahead():
    t = wall([0, 2, 0], [0, -1, 0])
    np.testing.assert_allclose(cast_ray(np.zeros(3), [0, 1, 0], t), [0, 2, 0], atol=1e-15)


def test_cast_ray_backwards_misses():
    assert cast_ray(np.zeros(3), [0, -1, 0], wall([0, 2, 0], [0, -1, 0])) is None


def test_cast_ray_parallel_misses():
    assert cast_ray(np.zeros(3), [1, 0, 0], wall([0, 2, 0], [0, -1, 0])) is None


def test_cast_ray_matches_crossing_number_oracle(rng):
    t = wall([0.2, 2.5, 0.1], [0.3, -1, 0.2], 1.2)
    poly = t.polygon_2d()
    agree = 0
    for _ in range(1000):
        d = t.anchor + rng.uniform(-1, 1, 3) - np.zeros(3)
        d /= np.linalg.norm(d)
        got = cast_ray(np.zeros(3), d, t)
        s = (t.anchor @ t.normal) / (d @ t.normal)
        uv = t.to_plane_coords(s * d)
        if edge_distance(uv, poly) < 1e-9:
            continue
        agree += (got is not None) == bool(crossing_number(uv, poly))
        if got is not None:
            assert abs(t.normal @ (got - t.anchor)) <= 1e-9
    assert agree >= 990


# -- winding numbers ------------------------------------------------------------------


def test_winding_examples():
    assert winding_number([0.5, 0.5], UNIT_SQUARE) == 1
    assert winding_number([10, 10], UNIT_SQUARE) == 0
    assert winding_number([0.5, 0.5], UNIT_SQUARE[::-1]) == -1
    assert winding_number([1.0, 0.5], UNIT_SQUARE) != 0  # on an edge counts as inside


def test_winding_requires_three_vertices():
    with pytest.raises(ValueError):
        winding_number([0, 0], [[0, 0], [1, 0]])


def test_winding_matches_crossing_number_on_star_polygon(rng):
    poly = star_polygon(rng)
    pts = rng.uniform(-1.1, 1.1, (10000, 2))
    wn = winding_numbers(pts, poly)
    mismatches = 0
    for p, w in zip(pts, wn):
        if (w != 0) != bool(crossing_number(p, poly)) and edge_distance(p, poly) > 1e-9:
            mismatches += 1
    assert mismatches == 0


# -- spinning scans -------------------------------------------------------------------


def test_ideal_returns_lie_on_targets(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32)
    assert len(r) > 0
    res = signed_residuals(r.points, r.target_id, tetra_scene.targets)
    assert np.abs(res).max() <= 1e-9


def test_scan_is_deterministic(tetra_scene, spinning32):
    p = random_sim3_perturbation(range(32), np.random.default_rng(3))
    a = scan_spinning(tetra_scene, spinning32, 2, p, rng_seed=9, range_sigma=0.01)
    b = scan_spinning(tetra_scene, spinning32, 2, p, rng_seed=9, range_sigma=0.01)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.collection_id, b.collection_id)
    np.testing.assert_array_equal(a.target_id, b.target_id)


def test_returns_ordered_by_scan_beam_azimuth(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32, 2)
    key = r.scan * 1000 + r.collection_id
    assert np.all(np.diff(key) >= 0)


def test_empty_scene_raises(spinning32):
    with pytest.raises(EmptyScene):
        scan_spinning(Scene(()), spinning32)


def test_shadowing_nearest_target_wins():
    model = SpinningLidar.uniform(1, 0.0, 0.0, azimuth_step_deg=0.5)
    near, far = wall([0, 2, 0], [0, -1, 0], 1.0), wall([0, 4, 0], [0, -1, 0], 4.0)
    r = scan_spinning(Scene((far, near)), model)
    assert set(np.unique(r.target_id)) == {0, 1}
    ahead = r.target_id == 0
    # any ray through the near square must report the near square
    dirs = r.points / np.linalg.norm(r.points, axis=1)[:, None]
    t, _ = cast_rays(np.zeros(3), dirs, [near])
    assert not np.any(np.isfinite(t[ahead]) & (t[ahead] < np.linalg.norm(r.points[ahead], axis=1)))


def test_no_return_behind_another_target(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32)
    dirs = r.points / np.linalg.norm(r.points, axis=1)[:, None]
    ranges = np.linalg.norm(r.points, axis=1)
    t, _ = cast_rays(np.zeros(3), dirs, tetra_scene.targets)
    assert np.all(t >= ranges - 1e-9)


def test_sim3_perturbation_undone_by_its_transform(tetra_scene, spinning32, rng):
    truth = random_sim3_perturbation(range(32), rng)
    r = scan_spinning(tetra_scene, spinning32, perturbation=truth)
    fixed = r.points.copy()
    for k, h in truth.transforms.items():
        sel = r.collection_id == k
        fixed[sel] = h.apply(r.points[sel])
    res = signed_residuals(fixed, r.target_id, tetra_scene.targets)
    assert np.abs(res).max() <= 1e-9
    raw = signed_residuals(r.points, r.target_id, tetra_scene.targets)
    assert np.abs(raw).max() > 1e-3


@pytest.mark.parametrize("kind", ["bl1", "bl2"])
def test_spherical_perturbation_undone_by_matching_model(tetra_scene, spinning32, kind):
    rng = np.random.default_rng(4)
    truth = (random_bl1_perturbation if kind == "bl1" else random_bl2_perturbation)(spinning32,
                                                                                    rng)
    r = scan_spinning(tetra_scene, spinning32, perturbation=truth)
    fixed = r.points.copy()
    for k, p in truth.params.items():
        sel = r.collection_id == k
        if sel.any():
            fixed[sel] = apply_model(r.points[sel], p)
    res = signed_residuals(fixed, r.target_id, tetra_scene.targets)
    assert np.abs(res).max() <= 1e-9


@given(st.integers(1, 4))
def test_scan_accumulation_multiplies_counts(k):
    model = lidar_from_id("spinning32")
    scene = four_wall_scene()
    one = scan_spinning(scene, model, 1)
    many = scan_spinning(scene, model, k, rng_seed=1, range_sigma=0.01)
    for beam in np.unique(one.collection_id):
        for t in range(4):
            n1 = np.sum((one.collection_id == beam) & (one.target_id == t))
            assert np.sum((many.collection_id == beam) & (many.target_id == t)) == k * n1


def test_range_noise_is_radial(tetra_scene, spinning32):
    clean = scan_spinning(tetra_scene, spinning32)
    noisy = scan_spinning(tetra_scene, spinning32, rng_seed=2, range_sigma=0.01)
    u0 = clean.points / np.linalg.norm(clean.points, axis=1)[:, None]
    u1 = noisy.points / np.linalg.norm(noisy.points, axis=1)[:, None]
    np.testing.assert_allclose(u0, u1, atol=1e-12)
    dr = np.linalg.norm(noisy.points, axis=1) - np.linalg.norm(clean.points, axis=1)
    assert 0.008 < dr.std() < 0.012


# -- OPA ------------------------------------------------------------------------------


def test_opa_zero_warp_equals_pinhole_grid():
    flat = SolidStateOPA(20, 20, 160, 40, ())
    warped_zero = SolidStateOPA(20, 20, 160, 40, tuple((k, 0.0) for k, _ in default_warp()))
    np.testing.assert_array_equal(flat.directions(), warped_zero.directions())
    # independent pinhole grid: uniform angles over the field of view
    th = np.deg2rad(np.linspace(-20, 20, 20))
    ph = np.deg2rad(np.linspace(-80, 80, 20))
    T, P = np.meshgrid(th, ph, indexing="ij")
    ref = np.stack([np.cos(T) * np.sin(P), np.cos(T) * np.cos(P), np.sin(T)], -1).reshape(-1, 3)
    np.testing.assert_allclose(flat.directions(), ref, atol=1e-15)
    scene = four_wall_scene()
    a, b = scan_opa(scene, flat), scan_opa(scene, warped_zero)
    np.testing.assert_array_equal(a.points, b.points)


def test_opa_warp_deviation_grows_with_amplitude():
    flat = SolidStateOPA(20, 20, 160, 40, ()).directions()
    devs = []
    for a in (0.0, 0.002, 0.005, 0.01, 0.02):
        d = SolidStateOPA(20, 20, 160, 40, default_warp(a)).directions()
        devs.append(np.arctan2(np.linalg.norm(np.cross(d, flat), axis=1),
                               np.sum(d * flat, axis=1)).max())
    assert devs[0] == 0.0
    assert np.all(np.diff(devs) > 0)


def test_opa_hits_four_targets():
    r = scan_opa(four_wall_scene(), lidar_from_id("opa20x20"))
    counts = np.bincount(r.target_id, minlength=4)
    assert np.all(counts > 0)


def test_opa_sim3_duality(rng):
    scene = four_wall_scene()
    model = lidar_from_id("opa20x20-flat")
    ideal = scan_opa(scene, model)
    truth = Sim3Perturbation({int(e): random_sim3(rng, (0.95, 1.05), 0.05)
                              for e in np.unique(ideal.collection_id)})
    r = scan_opa(scene, model, truth)
    fixed = r.points.copy()
    for k, h in truth.transforms.items():
        sel = r.collection_id == k
        fixed[sel] = h.apply(r.points[sel])
    assert np.abs(signed_residuals(fixed, r.target_id, scene.targets)).max() <= 1e-9


# -- systematic levels ----------------------------------------------------------------


def test_systematic_level_zero_is_identity(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32)
    assert inject_systematic(r, 0) is r


def test_systematic_level_three_shifts_ranges_by_three_cm(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32, 2)
    out = inject_systematic(r, 3, rng_seed=5)
    dr = np.linalg.norm(out.points, axis=1) - np.linalg.norm(r.points, axis=1)
    np.testing.assert_allclose(np.abs(dr), 0.03, atol=1e-12)
    for k in np.unique(r.collection_id):
        assert np.ptp(dr[r.collection_id == k]) <= 1e-12  # constant per collection and scan


def test_systematic_offset_mode_is_constant_vector(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32)
    out = inject_systematic(r, 4, rng_seed=1, mode="offset")
    d = out.points - r.points
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 0.04, atol=1e-12)
    for k in np.unique(r.collection_id):
        assert np.ptp(d[r.collection_id == k], axis=0).max() <= 1e-12


def test_systematic_level_out_of_range(tetra_scene, spinning32):
    r = scan_spinning(tetra_scene, spinning32)
    with pytest.raises(ValueError):
        inject_systematic(r, 8)


def test_uncalibrated_p2p_increases_with_level(tetra_scene, spinning32):
    from sim3cal.cost import mean_abs_p2p

    base = scan_spinning(tetra_scene, spinning32)
    costs = [mean_abs_p2p(None, inject_systematic(base, k, 0).points, base.target_id,
                          tetra_scene.targets) for k in range(8)]
    assert np.all(np.diff(costs) > 0)


def test_systematic_perturbation_spec_routes_through_injection(tetra_scene, spinning32):
    a = scan_spinning(tetra_scene, spinning32, perturbation=SystematicLevel(2, 7))
    b = inject_systematic(scan_spinning(tetra_scene, spinning32, perturbation=NoPerturbation()),
                          2, 7)
    np.testing.assert_array_equal(a.points, b.points)


def test_perturbation_kinds():
    assert Bl1Perturbation({}).kind == "bl1" and Bl2Perturbation({}).kind == "bl2"
