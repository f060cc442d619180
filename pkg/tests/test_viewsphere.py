import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspsynth import viewsphere as V


def count_by_search(limit, step):
    """Largest n with n * step <= limit, found by counting up (independent of floor())."""
    n = 0
    while (n + 1) * step <= limit * (1 + 1e-12):
        n += 1
    return n


class TestFormulas:
    @pytest.mark.parametrize("r_sph,r_circ,expected", [(0.8, 0.15, 8), (0.8, 0.8, 1), (1.0, 0.5, 3)])
    def test_floor_count(self, r_sph, r_circ, expected):
        assert V.latitude_floor_count(r_sph, r_circ) == expected

    def test_floor_count_rejects_ratio(self):
        with pytest.raises(ValueError):
            V.latitude_floor_count(0.5, 0.8)

    @pytest.mark.parametrize("theta,expected", [(math.pi / 2, 16), (math.pi / 6, 8), (1e-3, 0)])
    def test_circles(self, theta, expected):
        assert V.circles_per_floor(0.8, 0.15, theta) == expected

    def test_floor_angles(self):
        assert V.floor_angles(2) == [math.pi / 4, 3 * math.pi / 4]


class TestGenerate:
    def test_default_layout(self):
        vps = V.generate_viewpoints(V.SphereConfig())
        assert len(vps) == 84
        counts = [sum(1 for vp in vps[:-2] if vp.theta == th) for th in V.floor_angles(8)]
        assert counts == [3, 9, 13, 16, 16, 13, 9, 3]
        assert [vp.index for vp in vps] == list(range(84))
        assert vps[-2].position == (0.0, 0.0, 0.8) and vps[-1].position == (0.0, 0.0, -0.8)

    def test_search_oracle(self):
        r_sph, r_circ = 0.8, 0.15
        n = count_by_search(math.pi, 2 * math.asin(r_circ / r_sph))
        assert n == V.latitude_floor_count(r_sph, r_circ) == 8
        for i, th in enumerate(V.floor_angles(n)):
            m = count_by_search(2 * math.pi * r_sph * math.sin(th), 2 * r_circ)
            assert m == V.circles_per_floor(r_sph, r_circ, th), i

    def test_equal_radii(self):
        vps = V.generate_viewpoints(V.SphereConfig(0.8, 0.8))
        assert len(vps) == 5
        assert [vp.theta for vp in vps[:3]] == [math.pi / 2] * 3

    def test_exclusions(self):
        vps = V.generate_viewpoints(V.SphereConfig(excluded_indices={3, 40}))
        assert len(vps) == 82
        assert 3 not in {vp.index for vp in vps} and 4 in {vp.index for vp in vps}
        with pytest.raises(ValueError):
            V.generate_viewpoints(V.SphereConfig(excluded_indices={84}))

    def test_no_poles(self):
        assert len(V.generate_viewpoints(V.SphereConfig(include_poles=False))) == 82

    def test_config_validation(self):
        with pytest.raises(ValueError):
            V.SphereConfig(0.1, 0.2)
        with pytest.raises(ValueError):
            V.SphereConfig(0.8, 0.0)

    def test_center_offset(self):
        c = (0.1, -0.2, 0.3)
        vps = V.generate_viewpoints(V.SphereConfig(center=c))
        base = V.generate_viewpoints(V.SphereConfig())
        for a, b in zip(vps, base):
            np.testing.assert_allclose(np.subtract(a.position, c), b.position, atol=1e-15)
            assert a.euler_deg == b.euler_deg

    def test_deterministic(self):
        assert V.generate_viewpoints(V.SphereConfig()) == V.generate_viewpoints(V.SphereConfig())

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.2, 3.0), st.floats(0.02, 1.0))
    def test_properties(self, r_sph, frac):
        r_circ = r_sph * frac
        cfg = V.SphereConfig(r_sph, r_circ)
        n = V.latitude_floor_count(r_sph, r_circ)
        slack = 1 + 1e-12  # integer-snapping tolerance of the floor counts
        assert n * 2 * math.asin(r_circ / r_sph) <= math.pi * slack
        for th in V.floor_angles(n):
            m = V.circles_per_floor(r_sph, r_circ, th)
            if m >= 1:
                assert r_sph * math.sin(th) * (2 * math.pi / m) * slack >= 2 * r_circ
        for vp in V.generate_viewpoints(cfg):
            assert abs(np.linalg.norm(vp.position) - r_sph) <= 1e-9
            assert all(0 <= a < 360 for a in vp.euler_deg)
            assert 0 <= vp.theta <= math.pi and 0 <= vp.phi < 2 * math.pi
            expected = V.spherical_to_cartesian(r_sph, vp.theta, vp.phi)
            np.testing.assert_allclose(vp.position, expected, atol=1e-12)


class TestEuler:
    @pytest.mark.parametrize("pos,expected", [
        ((0.8, 0, 0), (0.0, 0.0, 0.0)),
        ((0, 0.8, 0), (90.0, 0.0, 180.0)),
        ((0, 0, 0.8), (0.0, 270.0, 0.0)),
    ])
    def test_examples(self, pos, expected):
        assert V.euler_from_cartesian(pos) == pytest.approx(expected, abs=1e-12)

    def test_origin(self):
        with pytest.raises(ValueError):
            V.euler_from_cartesian((0, 0, 0))

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3))
    def test_range(self, p):
        if not any(p):
            return
        assert all(0 <= a < 360 for a in V.euler_from_cartesian(p))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10, allow_nan=False), st.floats(-10, 10, allow_nan=False))
    def test_equator_pitch_zero(self, x, y):
        if x == 0 and y == 0:
            return
        assert V.euler_from_cartesian((x, y, 0.0))[1] == 0.0


class TestCamera:
    def test_plus_x(self):
        vp = V.generate_viewpoints(V.SphereConfig(0.8, 0.8))[0]  # theta=pi/2, phi=0
        cam = V.camera_from_viewpoint(vp, 0.8)
        np.testing.assert_allclose(cam.position, [0.8, 0, 0], atol=1e-15)
        c = cam.world_to_camera([[0, 0, 0]])[0]
        assert c[2] == pytest.approx(0.8) and abs(c[0]) < 1e-15 and abs(c[1]) < 1e-15
        assert (cam.cx, cam.cy) == (128.0, 128.0)

    def test_focal(self):
        vp = V.generate_viewpoints(V.SphereConfig())[0]
        cam = V.camera_from_viewpoint(vp, 0.5, (320, 256), vfov=90)
        assert cam.fy == pytest.approx(128.0, rel=1e-15) and cam.fx == cam.fy
        assert (cam.cx, cam.cy) == (160.0, 128.0)

    def test_distance_rescales_only(self):
        vp = V.generate_viewpoints(V.SphereConfig())[20]
        a = V.camera_from_viewpoint(vp, 0.5)
        b = V.camera_from_viewpoint(vp, 0.8)
        np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-15)
        np.testing.assert_allclose(a.position / 0.5, b.position / 0.8, atol=1e-15)

    def test_orthonormal_and_facing_center(self):
        center = np.array([0.05, -0.02, 0.1])
        for vp in V.generate_viewpoints(V.SphereConfig()):
            cam = V.camera_from_viewpoint(vp, 0.5, center=center, sphere_center=(0, 0, 0))
            r = cam.rotation
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0)
            c = cam.world_to_camera(center)[0]
            assert c[2] == pytest.approx(0.5) and np.hypot(c[0], c[1]) < 1e-12
            np.testing.assert_allclose(cam.position - center, 0.5 * np.asarray(vp.position) / 0.8, atol=1e-12)

    def test_pole_uses_x_up(self):
        vp = V.generate_viewpoints(V.SphereConfig())[-2]
        cam = V.camera_from_viewpoint(vp, 0.8)
        np.testing.assert_allclose(cam.position, [0, 0, 0.8], atol=1e-15)
        assert np.all(np.isfinite(cam.rotation))

    def test_errors(self):
        vp = V.generate_viewpoints(V.SphereConfig())[0]
        with pytest.raises(ValueError):
            V.camera_from_viewpoint(vp, 0.0)
        with pytest.raises(ValueError):
            V.camera_from_viewpoint(vp, 1.0, vfov=180)
        with pytest.raises(ValueError):
            V.camera_from_viewpoint(vp, 1.0, sphere_center=vp.position)


def test_explicit_angles():
    vps = V.viewpoints_from_angles([(math.pi / 2, 0.0), (0.0, 0.0)], 0.8)
    assert [vp.index for vp in vps] == [0, 1]
    assert vps[1].position == (0.0, 0.0, 0.8)


def test_table_columns():
    rows = V.viewpoint_table(V.generate_viewpoints(V.SphereConfig()))
    assert len(rows) == 84
    assert list(rows[0]) == ["index", "theta", "phi", "x", "y", "z", "roll", "pitch", "yaw"]
