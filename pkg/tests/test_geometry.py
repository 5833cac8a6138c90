import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slitsphere.geometry import (ARC_AZIMUTHS, NORTH, REFLECTION, ROTATION, SIDE_MINUS, SIDE_PLUS, SOUTH,
                                 CutoffProfile, DegenerateInput, arc_frame, cutoff_eval, distance_to_arc,
                                 geodesic_distance, make_cut_spec, reflect, rotate, sphere_point, tip_polar,
                                 unit)

from conftest import random_sphere_points

angles = st.one_of(st.just(0.0), st.floats(1e-6, math.pi))


def test_geodesic_distance_examples():
    eq = sphere_point(math.pi / 2, 0.3)
    assert geodesic_distance(NORTH, SOUTH) == pytest.approx(math.pi, abs=1e-15)
    assert geodesic_distance(eq, eq) == 0.0
    assert geodesic_distance(NORTH, eq) == pytest.approx(math.pi / 2, abs=1e-15)


def test_geodesic_distance_accurate_for_close_points():
    a = sphere_point(1.0, 0.2)
    b = sphere_point(1.0 + 1e-9, 0.2)
    # arccos of the dot product loses about half the digits here
    assert geodesic_distance(a, b) == pytest.approx(1e-9, rel=1e-6)


def test_geodesic_metric_properties(rng):
    a, b, c = (random_sphere_points(rng, 200) for _ in range(3))
    dab, dbc, dac = geodesic_distance(a, b), geodesic_distance(b, c), geodesic_distance(a, c)
    np.testing.assert_allclose(dab, geodesic_distance(b, a), atol=1e-15)
    assert np.all(dac <= dab + dbc + 1e-12)


def test_symmetry_maps(rng):
    a, b = random_sphere_points(rng, 100), random_sphere_points(rng, 100)
    np.testing.assert_allclose(np.linalg.matrix_power(ROTATION, 3), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(REFLECTION @ REFLECTION, np.eye(3), atol=0)
    d = geodesic_distance(a, b)
    np.testing.assert_allclose(geodesic_distance(rotate(a), rotate(b)), d, atol=1e-12)
    np.testing.assert_allclose(geodesic_distance(reflect(a), reflect(b)), d, atol=1e-12)
    # R maps C1 -> C2 -> C3, the reflection fixes C1 and swaps C2, C3
    for arc in range(3):
        p = sphere_point(1.0, ARC_AZIMUTHS[arc])
        np.testing.assert_allclose(rotate(p), sphere_point(1.0, ARC_AZIMUTHS[(arc + 1) % 3]), atol=1e-15)
    np.testing.assert_allclose(reflect(sphere_point(1.0, ARC_AZIMUTHS[0])), sphere_point(1.0, ARC_AZIMUTHS[0]),
                               atol=1e-15)
    np.testing.assert_allclose(reflect(sphere_point(1.0, ARC_AZIMUTHS[1])), sphere_point(1.0, ARC_AZIMUTHS[2]),
                               atol=1e-15)


def test_circles_in_fixed_planes():
    c = np.linspace(0.1, 3.0, 7)
    c1 = sphere_point(c, np.full(7, ARC_AZIMUTHS[0]))
    c2 = sphere_point(c, np.full(7, ARC_AZIMUTHS[1]))
    c3 = sphere_point(c, np.full(7, ARC_AZIMUTHS[2]))
    np.testing.assert_allclose(c1[:, 0], 0, atol=1e-15)
    assert np.all(c1[:, 1] < 0)
    np.testing.assert_allclose(c2[:, 0], math.sqrt(3) * c2[:, 1], atol=1e-15)
    np.testing.assert_allclose(c3[:, 0], -math.sqrt(3) * c3[:, 1], atol=1e-15)


def test_distance_to_arc_brute_force(rng):
    x = random_sphere_points(rng, 50)
    for arc, delta in ((0, 1.2), (1, 2.9), (2, 0.3)):
        c = np.linspace(0, delta, 400001)
        pts = sphere_point(c, np.full_like(c, ARC_AZIMUTHS[arc]))
        brute = np.array([geodesic_distance(p, pts).min() for p in x])
        np.testing.assert_allclose(distance_to_arc(x, ARC_AZIMUTHS[arc], delta), brute, atol=1e-7)


class TestTipPolar:
    frame = arc_frame(0, math.pi / 2)

    def test_sides_of_first_arc(self):
        # arc 1 runs along azimuth -pi/2, east is +x there
        above = sphere_point(math.pi / 2 - 0.1, ARC_AZIMUTHS[0])
        east = unit(above + np.array([1e-6, 0, 0]))
        west = unit(above - np.array([1e-6, 0, 0]))
        _, th_e = tip_polar(self.frame, east)
        _, th_w = tip_polar(self.frame, west)
        assert 0 < th_e < 1e-4
        assert 2 * math.pi - 1e-4 < th_w < 2 * math.pi

    def test_side_tag_on_cut(self):
        on_cut = sphere_point(math.pi / 2 - 0.1, ARC_AZIMUTHS[0])
        r, th = tip_polar(self.frame, on_cut, side=SIDE_PLUS)
        assert r == pytest.approx(0.1)
        assert th == 0.0
        _, th = tip_polar(self.frame, on_cut, side=SIDE_MINUS)
        assert th == 2 * math.pi

    def test_reflection_reverses_angle(self, rng):
        x = random_sphere_points(rng, 200)
        r, th = tip_polar(self.frame, x)
        rs, ths = tip_polar(self.frame, reflect(x))
        np.testing.assert_allclose(rs, r, atol=1e-12)
        np.testing.assert_allclose(ths, 2 * math.pi - th, atol=1e-12)

    def test_round_trip(self, rng):
        x = random_sphere_points(rng, 500)
        for arc, d in ((0, 0.7), (1, 2.0), (2, math.pi / 2)):
            f = arc_frame(arc, d)
            r, th = f.polar(x)
            np.testing.assert_allclose(f.point(r, th), x, atol=1e-12)

    def test_cut_direction_points_to_north(self):
        f = arc_frame(1, 1.0)
        _, th = f.polar(sphere_point(0.5, ARC_AZIMUTHS[1]), side=SIDE_PLUS)
        assert th == 0.0

    def test_rejects_tip(self):
        with pytest.raises(DegenerateInput):
            self.frame.polar(self.frame.tip)


class TestCutoff:
    psi = CutoffProfile()

    def test_plateaus(self):
        assert tuple(map(float, cutoff_eval(self.psi, 0.3))) == (1.0, 0.0, 0.0)
        assert tuple(map(float, cutoff_eval(self.psi, 1.2))) == (0.0, 0.0, 0.0)

    def test_finite_differences(self):
        t, eps = 0.75, 1e-4
        v, d1, d2 = cutoff_eval(self.psi, t)
        vp, _, _ = cutoff_eval(self.psi, t + eps)
        vm, _, _ = cutoff_eval(self.psi, t - eps)
        assert 0 < v < 1
        assert (vp - vm) / (2 * eps) == pytest.approx(float(d1), abs=1e-6)
        assert (vp - 2 * v + vm) / eps ** 2 == pytest.approx(float(d2), abs=1e-6)

    @pytest.mark.parametrize("t0", [0.5, 1.0])
    def test_c2_at_breakpoints(self, t0):
        eps = 1e-13
        lo = np.array(cutoff_eval(self.psi, t0 - eps), dtype=float)
        hi = np.array(cutoff_eval(self.psi, t0 + eps), dtype=float)
        np.testing.assert_allclose(lo, hi, atol=1e-10)

    @given(st.floats(0, 3))
    def test_range(self, t):
        v, _, _ = cutoff_eval(self.psi, t)
        assert 0.0 <= float(v) <= 1.0


class TestCutSpec:
    def test_equator(self):
        spec = make_cut_spec(*(math.pi / 2,) * 3)
        assert len(set(spec.rho)) == 1
        for arc in range(3):
            np.testing.assert_allclose(spec.tip_point(arc)[2], 0, atol=1e-15)
            assert geodesic_distance(spec.tip_point(arc), NORTH) == pytest.approx(math.pi / 2)

    def test_unslit(self):
        spec = make_cut_spec(0, 0, 0)
        assert spec.present == (False, False, False)
        assert spec.tips == ()

    def test_cracktip(self):
        spec = make_cut_spec(math.pi, 0, 0)
        np.testing.assert_allclose(spec.tip_point(0), SOUTH, atol=1e-15)
        assert spec.present == (True, False, False)
        assert {t.label for t in spec.tips} == {"1", "N"}

    def test_auto_rho_separation(self):
        spec = make_cut_spec(2.0, 0.4, 0.4)
        for t in spec.tips:
            for j in range(3):
                if j != t.arc and spec.delta[j] > 0:
                    assert float(distance_to_arc(t.frame.tip, ARC_AZIMUTHS[j], spec.delta[j])[0]) > t.rho
            assert geodesic_distance(t.frame.tip, NORTH) > t.rho
            assert t.rho <= math.pi / 2

    @pytest.mark.parametrize("bad", [-0.1, math.pi + 0.01, math.nan])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValueError):
            make_cut_spec(bad, 0.5, 0.5)

    def test_rejects_explicit_rho_too_large(self):
        with pytest.raises(ValueError):
            make_cut_spec(1.0, 1.0, 1.0, rho_policy=(1.2, 0.3, 0.3))

    def test_accepts_explicit_rho(self):
        spec = make_cut_spec(1.0, 1.0, 1.0, rho_policy=(0.3, 0.3, 0.3))
        assert spec.rho == (0.3, 0.3, 0.3)

    @settings(max_examples=60, deadline=None)
    @given(angles, angles, angles)
    def test_supports_disjoint(self, d1, d2, d3):
        spec = make_cut_spec(d1, d2, d3)
        for i, a in enumerate(spec.tips):
            assert 0 < a.rho <= math.pi / 2
            for b in spec.tips[i + 1:]:
                assert a.rho + b.rho < float(geodesic_distance(a.frame.tip, b.frame.tip))
