import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risthz.channel import (ChannelMatrix, NlosProfile, PathLossModel, cascade,
                            cascade_pathloss_farfield, cascade_pathloss_nearfield, los_gain,
                            los_gain_power, reflection_matrix, steering_matrix, steering_phases,
                            steering_vector, synthesize_direct_Q, synthesize_G, synthesize_H)
from risthz.geometry import (AnglePair, ArrayGeometry, DomainError, Position3D,
                             angles_bs_to_subris, angles_subris_to_user)

from conftest import F350, LAM350

C = 299792458.0


def _db(x):
    return 10 * math.log10(x)


class TestSteering:
    def test_broadside(self):
        g = ArrayGeometry(3, 2, LAM350 / 2)
        a = steering_vector(g, AnglePair(0.0, 0.0), LAM350)
        np.testing.assert_allclose(a, np.full(6, 1 / math.sqrt(6)))

    def test_hand_phases(self):
        g = ArrayGeometry(2, 2, 0.5)
        ph = steering_phases(g, 0.0, math.pi / 2, 1.0)
        np.testing.assert_allclose(ph, [0, 0, math.pi, math.pi], atol=1e-12)

    @given(st.integers(1, 12), st.integers(1, 12), st.floats(-3.1, 3.1), st.floats(-1.5, 1.5))
    def test_unit_norm(self, m, n, az, el):
        a = steering_vector(ArrayGeometry(m, n, LAM350 / 2), AnglePair(az, el), LAM350)
        assert abs(np.vdot(a, a) - 1) < 1e-12

    def test_matrix_rows(self):
        g = ArrayGeometry(4, 4, LAM350 / 2)
        M = steering_matrix(g, [0.1, 0.2], [0.3, -0.4], LAM350)
        np.testing.assert_allclose(M[1], steering_vector(g, AnglePair(0.2, -0.4), LAM350))

    def test_large_array_near_orthogonal(self):
        g = ArrayGeometry(16, 16, LAM350 / 2)
        rng = np.random.default_rng(3)
        for _ in range(200):
            az1, az2 = rng.uniform(-math.pi, math.pi, 2)
            el1, el2 = rng.uniform(0.3, 1.4, 2)
            a1 = steering_vector(g, AnglePair(az1, el1), LAM350)
            a2 = steering_vector(g, AnglePair(az2, el2), LAM350)
            # main lobe: direction-cosine offset of 2/(n) in either coordinate
            u1 = np.array([math.cos(az1), math.sin(az1)]) * math.sin(el1)
            u2 = np.array([math.cos(az2), math.sin(az2)]) * math.sin(el2)
            if np.max(np.abs(u1 - u2)) > 2 * 2 / 16:
                assert abs(np.vdot(a1, a2)) < 0.1


class TestPathLoss:
    def test_unit_distance(self):
        p = los_gain_power(PathLossModel(F350), 1.0)
        assert p == pytest.approx(4.646e-9, rel=1e-3)
        assert _db(p) == pytest.approx(-83.33, abs=0.01)

    def test_inverse_square(self):
        m = PathLossModel(F350)
        assert _db(los_gain_power(m, 2.0)) - _db(los_gain_power(m, 4.0)) == pytest.approx(
            20 * math.log10(2), abs=1e-12)

    def test_absorption(self):
        a = los_gain_power(PathLossModel(F350), 1.0)
        b = los_gain_power(PathLossModel(F350, math.log(10)), 1.0)
        assert b == pytest.approx(a / 10, rel=1e-12)

    @settings(max_examples=200)
    @given(st.floats(0.1, 100), st.floats(1e11, 1e12), st.floats(0, 1))
    def test_closed_form(self, d, f, mu):
        expected = (C / (4 * math.pi * f * d)) ** 2 * math.exp(-mu * d)
        assert los_gain_power(PathLossModel(f, mu), d) == pytest.approx(expected, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            los_gain_power(PathLossModel(F350), 0.0)
        with pytest.raises(DomainError):
            PathLossModel(-1.0)
        with pytest.raises(DomainError):
            PathLossModel(F350, -0.1)

    def test_complex_gain(self, rng):
        m = PathLossModel(F350)
        assert los_gain(m, 2.0) == pytest.approx(math.sqrt(los_gain_power(m, 2.0)))
        g = los_gain(m, 2.0, rng)
        assert abs(g) ** 2 == pytest.approx(los_gain_power(m, 2.0), rel=1e-12)

    def test_near_cascade(self):
        m = PathLossModel(F350)
        v = cascade_pathloss_nearfield(m, 6, 3)
        assert v == pytest.approx(5.736e-11, rel=1e-3)
        assert _db(v) == pytest.approx(-102.41, abs=0.01)
        assert v == pytest.approx(los_gain_power(m, 9.0), rel=1e-15)
        assert cascade_pathloss_nearfield(m, 3, 6) == v

    def test_far_cascade(self):
        m = PathLossModel(F350)
        v = cascade_pathloss_farfield(m, 6, 3)
        assert v == pytest.approx(1.434e-11, rel=1e-3)
        assert _db(v) == pytest.approx(-108.43, abs=0.01)
        assert cascade_pathloss_farfield(m, 3, 6) == pytest.approx(v, rel=1e-15)

    @given(st.floats(0.1, 50), st.floats(0.1, 50))
    def test_far_below_near(self, d1, d2):
        m = PathLossModel(F350)
        if d1 * d2 >= d1 + d2:
            assert cascade_pathloss_farfield(m, d1, d2) <= cascade_pathloss_nearfield(m, d1, d2) * (1 + 1e-12)

    def test_table(self, tmp_path):
        p = tmp_path / "mu.txt"
        p.write_text("300 0.0\n400 0.2\n")
        assert PathLossModel.from_table(350e9, p).absorption == pytest.approx(0.1)
        p.write_text("400 0.0\n300 0.2\n")
        with pytest.raises(ValueError):
            PathLossModel.from_table(350e9, p)


def _arrays():
    spacing = LAM350 / 2
    bs = ArrayGeometry(4, 4, spacing, 2, 2, 0.05, Position3D(-4, -4, -2))
    ris = ArrayGeometry(4, 4, spacing, 2, 2, 0.05, Position3D(0, 0, 0))
    user = ArrayGeometry(2, 2, spacing, center=Position3D(2, 2, 1))
    return bs, ris, user


class TestSynthesis:
    def test_G_los_reconstruction(self):
        bs, ris, _ = _arrays()
        m = PathLossModel(F350)
        G = synthesize_G(bs, ris, m, NlosProfile(count=0), np.random.default_rng(1))
        assert G.shape == (4 * 16, 4 * 16)
        for i in range(4):
            for j in range(4):
                aoa, aod, d1 = angles_bs_to_subris(bs.subgrid_center(j), ris.subgrid_center(i))
                beta = G.los_gains[i, j]
                assert abs(beta) ** 2 == pytest.approx(los_gain_power(m, d1), rel=1e-12)
                expected = 16 * beta * np.outer(steering_vector(ris, aoa, LAM350),
                                                steering_vector(bs, aod, LAM350).conj())
                np.testing.assert_allclose(G.block(i, j), expected, rtol=1e-12, atol=0)
                assert np.linalg.matrix_rank(G.block(i, j)) == 1
                assert np.linalg.norm(G.block(i, j)) ** 2 == pytest.approx(
                    256 * abs(beta) ** 2, rel=1e-12)

    def test_deterministic(self):
        bs, ris, user = _arrays()
        m = PathLossModel(F350)
        a = synthesize_G(bs, ris, m, NlosProfile(), np.random.default_rng(9)).entries
        b = synthesize_G(bs, ris, m, NlosProfile(), np.random.default_rng(9)).entries
        assert np.array_equal(a, b)
        h1 = synthesize_H(user, ris, m, NlosProfile(), np.random.default_rng(9)).entries
        h2 = synthesize_H(user, ris, m, NlosProfile(), np.random.default_rng(9)).entries
        assert np.array_equal(h1, h2)

    def test_H_shape_and_los(self):
        _, ris, user = _arrays()
        m = PathLossModel(F350)
        H = synthesize_H(user, ris, m, NlosProfile(count=0), np.random.default_rng(2))
        assert H.shape == (4, 64)
        aod, aoa, d2 = angles_subris_to_user(user.center, ris.subgrid_center(3))
        expected = math.sqrt(4 * 16) * H.los_gains[0, 3] * np.outer(
            steering_vector(user, aoa, LAM350), steering_vector(ris, aod, LAM350).conj())
        np.testing.assert_allclose(H.block(0, 3), expected, rtol=1e-12)

    def test_nlos_is_weaker(self):
        bs, ris, _ = _arrays()
        m = PathLossModel(F350)
        los = synthesize_G(bs, ris, m, NlosProfile(count=0), np.random.default_rng(5))
        full = synthesize_G(bs, ris, m, NlosProfile(count=2), np.random.default_rng(5))
        diff = full.block(0, 0) - los.block(0, 0)
        # two rays each at least 10 dB down
        assert np.linalg.norm(diff) <= 2 * np.linalg.norm(los.block(0, 0)) * 10 ** (-0.5) * (1 + 1e-9)

    def test_direct_rank_and_power(self):
        bs, _, user = _arrays()
        m = PathLossModel(F350)
        Q = synthesize_direct_Q(bs, user, m, NlosProfile(count=3), np.random.default_rng(4))
        assert Q.shape == (4, 64)
        assert np.linalg.matrix_rank(Q.entries, tol=1e-20) <= 3
        d = bs.center.distance_to(user.center)
        full_los = 4 * 16 * 4 * los_gain_power(m, d)
        # three rays, each <= -10 dB of a LOS ray spanning all four subarrays
        assert np.linalg.norm(Q.entries) ** 2 <= 9 * 0.1 * full_los

    def test_direct_blocked(self):
        bs, _, user = _arrays()
        Q = synthesize_direct_Q(bs, user, PathLossModel(F350), NlosProfile(count=0),
                                np.random.default_rng(0))
        assert not Q.entries.any()

    def test_nlos_profile_domain(self):
        with pytest.raises(DomainError):
            NlosProfile(count=-1)


class TestCascade:
    def test_identity(self, rng):
        H = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
        G = rng.normal(size=(5, 4)) + 1j * rng.normal(size=(5, 4))
        np.testing.assert_allclose(cascade(H, np.eye(5), G), H @ G)
        np.testing.assert_allclose(cascade(H, np.ones(5), G), H @ G)

    def test_scalar(self):
        out = cascade(np.array([[2.0]]), np.array([np.exp(1j)]), np.array([[3.0]]))
        assert out[0, 0] == pytest.approx(6 * np.exp(1j))

    def test_triangle_bound(self, rng):
        H = rng.normal(size=(2, 6)) + 1j * rng.normal(size=(2, 6))
        G = rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3))
        O = np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
        T = cascade(H, O, G)
        assert np.all(np.abs(T) <= np.abs(H) @ np.abs(G) + 1e-12)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            cascade(np.ones((2, 3)), np.ones(4), np.ones((4, 2)))
        with pytest.raises(ValueError):
            cascade(np.ones((2, 3)), np.eye(3), np.ones((4, 2)))

    def test_reflection_matrix(self):
        O = reflection_matrix([np.array([1, 1j]), np.array([-1])])
        np.testing.assert_array_equal(np.diag(O), [1, 1j, -1])
        assert np.count_nonzero(O - np.diag(np.diag(O))) == 0

    def test_channel_matrix_wraps(self, rng):
        bs, ris, user = _arrays()
        G = synthesize_G(bs, ris, PathLossModel(F350), NlosProfile(), rng)
        H = synthesize_H(user, ris, PathLossModel(F350), NlosProfile(), rng)
        np.testing.assert_allclose(cascade(H, np.ones(64), G), H.entries @ G.entries)
