import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risthz.geometry import (AnglePair, ArrayGeometry, DomainError, FieldRegion, Position3D,
                             angles_bs_to_subris, angles_in_frame, angles_subris_to_user,
                             angular_separation, channel_column_inner_product, classify_field,
                             field_boundary, optimal_bs_subarray_spacing, optimal_subris_spacing,
                             orthogonality_residual, point_at, wrap_azimuth)

from conftest import F350, LAM350


class TestSpacing:
    def test_far_field_value(self):
        assert optimal_subris_spacing(6.0, 8.5655e-4, 2, 1) == pytest.approx(0.050692, abs=5e-7)
        assert optimal_bs_subarray_spacing(6.0, 8.5655e-4, 2, 1) == pytest.approx(0.050692, abs=5e-7)

    def test_unity(self):
        assert optimal_subris_spacing(1, 1, 1, 1) == 1.0
        assert optimal_bs_subarray_spacing(1, 1, 1, 1) == 1.0

    def test_scaling(self):
        base = optimal_subris_spacing(3.0, 1e-3, 4, 1)
        assert optimal_subris_spacing(3.0, 1e-3, 4, 4) == pytest.approx(2 * base, rel=1e-15)
        assert optimal_bs_subarray_spacing(3.0, 1e-3, 4) == pytest.approx(
            optimal_bs_subarray_spacing(3.0, 1e-3, 1) / 2, rel=1e-15)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            optimal_subris_spacing(*args)

    @given(st.floats(0.1, 100), st.floats(1e-4, 1e-2), st.integers(1, 64),
           st.integers(1, 5), st.integers(1, 5))
    def test_square_q_scaling(self, d1, lam, N, q, k):
        assert optimal_subris_spacing(d1, lam, N, q * q * k) == pytest.approx(
            q * optimal_subris_spacing(d1, lam, N, k), rel=1e-12)


class TestFieldBoundary:
    @pytest.mark.parametrize("ms,expected", [(4, 0.0274), (8, 0.1096), (16, 0.4386), (32, 1.754)])
    def test_reported_boundaries(self, ms, expected):
        assert field_boundary(2, ms, ms, 8.5655e-4) == pytest.approx(expected, rel=1e-3)

    @given(st.integers(1, 8), st.integers(1, 64), st.integers(1, 64), st.floats(1e-4, 1e-2))
    def test_monotone(self, N, m, n, lam):
        D = field_boundary(N, m, n, lam)
        assert field_boundary(N + 1, m, n, lam) > D
        assert field_boundary(N, m + 1, n, lam) > D
        assert field_boundary(N, m, n + 1, lam) > D
        assert field_boundary(N, m, n, lam * 1.5) > D

    def test_classify(self):
        assert classify_field(1.0, 1.754) is FieldRegion.NEAR
        assert classify_field(3.0, 1.754) is FieldRegion.FAR
        assert classify_field(1.754, 1.754) is FieldRegion.FAR


class TestAngles:
    def test_symmetric_octant(self):
        aoa, aod, d1 = angles_bs_to_subris(Position3D(1, 1, math.sqrt(2)), Position3D(0, 0, 0))
        assert d1 == pytest.approx(2.0)
        assert aoa.azimuth == pytest.approx(math.pi / 4)
        assert aoa.elevation == pytest.approx(math.pi / 4)
        assert aod.azimuth == pytest.approx(-math.pi / 4)
        assert aod.elevation == pytest.approx(-math.pi / 4)

    def test_near_field_bs(self):
        aoa, _, d1 = angles_bs_to_subris(Position3D(-0.6, -0.7, 0.4), Position3D(0, 0, 0))
        assert d1 == pytest.approx(math.sqrt(1.01), rel=1e-12)
        assert aoa.azimuth == pytest.approx(math.atan2(-0.7, -0.6), abs=1e-12)
        assert aoa.azimuth == pytest.approx(-2.2794, abs=1e-4)
        assert aoa.elevation == pytest.approx(math.asin(0.4 / math.sqrt(1.01)), abs=1e-12)

    def test_on_x_axis(self):
        aoa, _, _ = angles_bs_to_subris(Position3D(5, 0, 0), Position3D(0, 0, 0))
        assert aoa.azimuth == 0.0 and aoa.elevation == 0.0

    def test_user_side(self):
        aod, aoa, d2 = angles_subris_to_user(Position3D(1, 1, math.sqrt(2)), Position3D(0, 0, 0))
        assert d2 == pytest.approx(2.0)
        assert (aod.azimuth, aod.elevation) == pytest.approx((math.pi / 4, math.pi / 4))
        assert (aoa.azimuth, aoa.elevation) == pytest.approx((-math.pi / 4, -math.pi / 4))

    def test_coincident(self):
        with pytest.raises(DomainError):
            angles_in_frame(Position3D(1, 2, 3), Position3D(1, 2, 3))

    def test_rotated_frame(self):
        # RIS rotated 90 degrees about z: global +y becomes local +x
        R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
        ang, _ = angles_in_frame(Position3D(0, 0, 0), Position3D(0, 2, 0), R)
        assert ang.azimuth == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=200)
    @given(st.floats(-math.pi + 1e-6, math.pi), st.floats(-1.5, 1.5), st.floats(0.01, 100))
    def test_round_trip(self, az, el, d):
        origin = Position3D(0.3, -0.2, 0.1)
        p = point_at(origin, AnglePair(az, el), d)
        ang, dist = angles_in_frame(origin, p)
        assert dist == pytest.approx(d, rel=1e-12)
        assert ang.elevation == pytest.approx(el, abs=1e-9)
        assert abs(wrap_azimuth(ang.azimuth - az)) < 1e-9

    def test_angle_pair_domain(self):
        with pytest.raises(DomainError):
            AnglePair(4.0, 0.0)
        with pytest.raises(DomainError):
            AnglePair(0.0, 2.0)

    def test_wrap(self):
        assert wrap_azimuth(-math.pi) == math.pi
        assert wrap_azimuth(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    def test_negated(self):
        a = AnglePair(math.pi, 0.3).negated()
        assert a.azimuth == math.pi and a.elevation == -0.3

    def test_separation(self):
        assert angular_separation(AnglePair(0, 0), AnglePair(math.pi / 2, 0)) == pytest.approx(math.pi / 2)


class TestArrayGeometry:
    def test_subgrid_centered(self):
        g = ArrayGeometry(4, 4, 0.001, 2, 2, 0.05, Position3D(1, 2, 3))
        c = g.subgrid_centers()
        np.testing.assert_allclose(c.mean(axis=0), [1, 2, 3])
        np.testing.assert_allclose(c[0], [0.975, 1.975, 3])
        np.testing.assert_allclose(c[1], [0.975, 2.025, 3])

    def test_element_positions(self):
        g = ArrayGeometry(2, 3, 0.5)
        p = g.element_positions()
        assert p.shape == (6, 3)
        np.testing.assert_allclose(p.mean(axis=0), 0, atol=1e-15)
        np.testing.assert_allclose(p[1] - p[0], [0, 0.5, 0])

    def test_validation(self):
        with pytest.raises(DomainError):
            ArrayGeometry(0, 4, 0.1)
        with pytest.raises(DomainError):
            ArrayGeometry(4, 4, 0.1, 2, 2)
        with pytest.raises(DomainError):
            ArrayGeometry(4, 4, 0.1, 2, 2, 0.05)
        with pytest.raises(DomainError):
            ArrayGeometry(4, 4, 0.1, orientation=np.ones((3, 3)))


class TestOrthogonality:
    def test_coherent(self):
        d1 = 6.0
        pre = (LAM350 / (4 * math.pi * d1)) ** 2
        val = channel_column_inner_product(4, (1, 2), (1, 2), d1, F350, 0.05)
        assert abs(val) == pytest.approx(16 * pre, rel=1e-12)

    def test_vanishes_at_optimum(self):
        d1 = 6.0
        a = optimal_subris_spacing(d1, LAM350, 4)
        pre = (LAM350 / (4 * math.pi * d1)) ** 2
        assert abs(channel_column_inner_product(4, (0, 0), (1, 0), d1, F350, a)) < 1e-10 * pre

    def test_nonzero_off_optimum(self):
        d1 = 6.0
        a = optimal_subris_spacing(d1, LAM350, 4) / 2
        assert abs(channel_column_inner_product(4, (0, 0), (1, 0), d1, F350, a)) > 0

    def test_geometric_series_oracle(self):
        # at alpha_op the u-sum reduces to sum_u exp(j 2 pi u dx q / N)
        N, q, d1 = 8, 3, 2.5
        a = optimal_subris_spacing(d1, LAM350, N, q)
        k = math.pi * F350 * a ** 2 / (299792458.0 * d1)
        u = np.arange(N)
        direct = np.sum(np.exp(1j * k * ((u - 1) ** 2 - (u - 4) ** 2)))
        assert abs(direct) < 1e-9

    def test_index_bounds(self):
        with pytest.raises(DomainError):
            channel_column_inner_product(2, (0, 0), (2, 0), 1.0, F350, 0.01)

    @pytest.mark.parametrize("N", [2, 4, 8])
    @pytest.mark.parametrize("q", [1, 2])
    def test_residual(self, N, q):
        d1 = 6.0
        a = optimal_subris_spacing(d1, LAM350, N, q)
        assert orthogonality_residual(N, d1, F350, a, q=q) < 1e-10

    @pytest.mark.parametrize("N", [2, 4, 8])
    def test_residual_half_spacing(self, N):
        d1 = 6.0
        a = optimal_subris_spacing(d1, LAM350, N) / 2
        assert orthogonality_residual(N, d1, F350, a) > 1e-3

    def test_absorption_scales(self):
        a = channel_column_inner_product(2, (0, 0), (0, 0), 3.0, F350, 0.05)
        b = channel_column_inner_product(2, (0, 0), (0, 0), 3.0, F350, 0.05, absorption=math.log(10) / 3)
        assert abs(b) == pytest.approx(abs(a) / 10, rel=1e-12)
