import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sim3cal.liegroup import SphericalPoint, spherical_to_cartesian
from sim3cal.models import (Bl1Params, Bl2Params, apply_model, bl1_apply, bl2_apply,
                            bl2_apply_matrix_form)

angle = st.floats(-3.0, 3.0)


def test_bl1_zero_params_sets_elevation_to_zero():
    p = SphericalPoint(2.0, 0.3, 0.7)
    np.testing.assert_allclose(bl1_apply(p, Bl1Params()), spherical_to_cartesian(2.0, 0.0, 0.7),
                               atol=1e-15)


def test_bl1_range_offset_example():
    np.testing.assert_allclose(bl1_apply(SphericalPoint(2.0, 0.0, 0.0), Bl1Params(1.0)),
                               [0, 3, 0], atol=1e-15)


def test_bl1_high_precision_oracle(rng):
    mpmath.mp.dps = 40
    for _ in range(20):
        rho, th, ph = rng.uniform(0.5, 20), rng.uniform(-0.5, 0.5), rng.uniform(-3, 3)
        a = Bl1Params(*rng.uniform(-0.1, 0.1, 3))
        r = mpmath.mpf(rho) + mpmath.mpf(a.drho)
        psi = mpmath.mpf(ph) - mpmath.mpf(a.dphi)
        ct = mpmath.cos(mpmath.mpf(a.dtheta))
        ref = [r * ct * mpmath.sin(psi), r * ct * mpmath.cos(psi),
               r * mpmath.sin(mpmath.mpf(a.dtheta))]
        got = bl1_apply(np.array([rho, th, ph]), a)
        np.testing.assert_allclose(got, [float(v) for v in ref], rtol=0, atol=1e-13)


def test_bl2_unit_scale_equals_bl1_zero_offsets():
    p = SphericalPoint(3.0, 0.1, -0.4)
    np.testing.assert_allclose(bl2_apply(p, Bl2Params()), bl1_apply(p, Bl1Params()), atol=1e-15)


def test_bl2_vertical_offset_is_pure_z_shift():
    p = SphericalPoint(3.0, 0.1, -0.4)
    d = bl2_apply(p, Bl2Params(v=0.25)) - bl2_apply(p, Bl2Params())
    np.testing.assert_allclose(d, [0, 0, 0.25], atol=1e-15)


def test_bl2_matrix_form_agrees_on_random_inputs(rng):
    for _ in range(1000):
        p = np.array([rng.uniform(0.5, 30), rng.uniform(-0.5, 0.5), rng.uniform(-np.pi, np.pi)])
        a = Bl2Params(rng.uniform(-0.1, 0.1), rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1),
                      rng.uniform(0.9, 1.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1))
        np.testing.assert_allclose(bl2_apply_matrix_form(p, a), bl2_apply(p, a), rtol=0,
                                   atol=1e-12)


def test_bl2_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        Bl2Params(s=0.0)


@given(st.floats(0.5, 20), angle, angle)
def test_apply_model_round_trips_through_spherical(rho, th, ph):
    th = np.clip(th, -1.4, 1.4)
    x = spherical_to_cartesian(rho, th, ph)
    a = Bl1Params(0.0, th, 0.0)
    np.testing.assert_allclose(apply_model(x[None], a)[0], x, atol=1e-12)


def test_params_array_round_trip():
    a = Bl2Params(0.1, 0.2, 0.3, 1.1, 0.05, -0.02)
    assert Bl2Params.from_array(a.as_array()) == a
    b = Bl1Params(0.1, -0.2, 0.3)
    assert Bl1Params.from_array(b.as_array()) == b
