import numpy as np
import pytest

from ptychokit import circphase
from ptychokit.autodiff import Tensor


def test_wrap_convention():
    assert circphase.wrap_angle(np.pi) == pytest.approx(np.pi)
    assert circphase.wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert circphase.wrap_angle(0.0) == 0.0
    assert circphase.wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    assert circphase.wrap_angle(np.pi + 0.1) == pytest.approx(-np.pi + 0.1)
    phi = np.random.default_rng(0).uniform(-20, 20, 1000)
    w = circphase.wrap_angle(phi)
    assert np.all((w > -np.pi) & (w <= np.pi))
    assert np.allclose(np.exp(1j * w), np.exp(1j * phi), atol=1e-12)


def test_embed_recover_roundtrip():
    phi = np.random.default_rng(1).uniform(-np.pi + 1e-3, np.pi, (32, 32))
    c, s = circphase.embed(phi)
    rec = circphase.recover_phase(c, s)
    assert np.abs(circphase.wrapped_diff(phi, rec)).max() < 1e-6


def test_embed_rejects_nonfinite():
    with pytest.raises(ValueError):
        circphase.embed(np.array([0.0, np.nan]))


def test_recover_phase_degenerate_and_range():
    phase, count = circphase.recover_phase(np.zeros(3), np.zeros(3),
                                           return_degenerate_count=True)
    assert count == 3
    assert np.all(phase == 0.0)
    # -pi maps to +pi
    assert circphase.recover_phase(np.array([-1.0]), np.array([0.0]))[0] == pytest.approx(np.pi)


def test_unit_project_numpy_and_tensor_agree():
    rng = np.random.default_rng(2)
    c = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    s = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    cn, sn = circphase.unit_project(c, s)
    ct, st = circphase.unit_project(Tensor(c), Tensor(s))
    assert np.allclose(cn, ct.data, atol=1e-6)
    assert np.allclose(sn, st.data, atol=1e-6)
    assert np.allclose(cn ** 2 + sn ** 2, 1.0, atol=1e-5)


def test_unit_project_near_origin_is_finite():
    c, s = circphase.unit_project(np.zeros(2), np.zeros(2))
    assert np.all(np.isfinite(c)) and np.all(np.isfinite(s))


def test_geodesic_distance_properties():
    rng = np.random.default_rng(3)
    a = rng.uniform(-np.pi, np.pi, 500)
    b = rng.uniform(-np.pi, np.pi, 500)
    d = circphase.geodesic_dist(a, b)
    assert np.all((d >= 0) & (d <= np.pi))
    assert np.allclose(d, circphase.geodesic_dist(b, a))
    assert np.allclose(circphase.geodesic_dist(a, a), 0.0)
    # distance is invariant under 2*pi shifts
    assert np.allclose(d, circphase.geodesic_dist(a + 2 * np.pi, b), atol=1e-12)
    # the cut: pi - eps and -(pi - eps) are 2*eps apart, not ~2*pi
    assert circphase.geodesic_dist(np.pi - 0.01, -(np.pi - 0.01)) == pytest.approx(0.02)
