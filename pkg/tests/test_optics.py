import numpy as np
import pytest

from prismscan.optics import (
    DeflectionVector,
    PrismSpec,
    TotalInternalReflectionError,
    angles_to_dir,
    deflection_vector,
    dir_to_angles,
    fov_envelope,
    paraxial_deflection,
    refract_interface,
    steer_three_prisms,
    steer_two_prisms,
    trace_prism,
)

BASE = PrismSpec(refractive_index=1.51, wedge_angle=np.deg2rad(18.0))
BORESIGHT = np.array([0.0, 0.0, 1.0])


def scalar_wedge_deviation(n, wedge):
    # independent oracle: axial ray, wedged entry face then flat exit face
    b = np.arcsin(np.sin(wedge) / n)
    return np.arcsin(n * np.sin(wedge - b))


def polar_of(d):
    return np.arccos(np.clip(np.asarray(d)[..., 2], -1.0, 1.0))


class TestPrismSpec:
    def test_paraxial_deflection_value(self):
        assert paraxial_deflection(BASE) == pytest.approx(np.deg2rad(9.18), abs=1e-12)

    def test_vanishes_as_index_approaches_one(self):
        weak = PrismSpec(1.0 + 1e-9, np.deg2rad(18.0))
        assert paraxial_deflection(weak) < 1e-9

    @pytest.mark.parametrize("n,wedge", [(1.0, 0.1), (3.5, 0.1), (1.5, 0.0), (1.5, np.pi / 4)])
    def test_rejects_bad_parameters(self, n, wedge):
        with pytest.raises(ValueError):
            PrismSpec(n, wedge)

    def test_deflection_vector_points_at_base(self):
        dv = deflection_vector(BASE, 0.0)
        assert dv.magnitude == pytest.approx(BASE.deflection)
        assert dv.phase == pytest.approx(np.pi)
        np.testing.assert_allclose(dv.components(), [-BASE.deflection, 0.0], atol=1e-12)

    def test_deflection_vector_rejects_negative_magnitude(self):
        with pytest.raises(ValueError):
            DeflectionVector(-0.1, 0.0)


class TestRefraction:
    def test_normal_incidence_unchanged(self):
        out = refract_interface(BORESIGHT, np.array([0.0, 0.0, -1.0]), 1.0, 1.5)
        np.testing.assert_allclose(out, BORESIGHT, atol=1e-15)

    def test_thirty_degrees_into_glass(self):
        d = np.array([np.sin(np.deg2rad(30.0)), 0.0, np.cos(np.deg2rad(30.0))])
        out = refract_interface(d, np.array([0.0, 0.0, -1.0]), 1.0, 1.5)
        assert np.degrees(np.arcsin(out[0])) == pytest.approx(19.4712, abs=1e-3)
        assert out[0] == pytest.approx(np.sin(np.deg2rad(30.0)) / 1.5, abs=1e-12)

    def test_total_internal_reflection(self):
        d = np.array([np.sin(np.deg2rad(60.0)), 0.0, np.cos(np.deg2rad(60.0))])
        with pytest.raises(TotalInternalReflectionError):
            refract_interface(d, np.array([0.0, 0.0, -1.0]), 1.5, 1.0)

    def test_rejects_normal_on_wrong_side(self):
        with pytest.raises(ValueError):
            refract_interface(BORESIGHT, np.array([0.0, 0.0, 1.0]), 1.0, 1.5)

    def test_snell_residual_and_plane_of_incidence(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            if d @ n > -0.05:  # keep incidence well defined
                n = -n if d @ n > 0 else n
                if d @ n > -0.05:
                    continue
            n1, n2 = sorted(rng.uniform(1.0, 1.8, size=2))
            out = refract_interface(d, n, n1, n2)  # into the denser medium
            assert abs(np.linalg.norm(out) - 1.0) < 1e-12
            s_in = np.linalg.norm(np.cross(d, n))
            s_out = np.linalg.norm(np.cross(out, n))
            assert abs(n1 * s_in - n2 * s_out) < 1e-12
            # refracted ray stays in the plane spanned by d and n
            assert abs(np.dot(np.cross(d, n), out)) < 1e-12


class TestTracePrism:
    def test_boresight_matches_scalar_oracle(self):
        out = trace_prism(BORESIGHT, BASE, 0.0)
        expect = scalar_wedge_deviation(1.51, np.deg2rad(18.0))
        assert polar_of(out) == pytest.approx(expect, abs=1e-12)
        assert out[0] < 0  # deviates toward the base, opposite the apex
        assert abs(out[1]) < 1e-15

    def test_exact_close_to_paraxial_at_boresight(self):
        gap = abs(polar_of(trace_prism(BORESIGHT, BASE, 0.0)) - BASE.deflection)
        assert gap < np.deg2rad(0.6)

    @pytest.mark.parametrize("wedge_deg", [2.0, 6.0, 10.0, 14.0, 18.0])
    def test_paraxial_gap_under_five_percent_of_fov(self, wedge_deg):
        p = PrismSpec(1.51, np.deg2rad(wedge_deg))
        gap = abs(polar_of(trace_prism(BORESIGHT, p, 0.0)) - p.deflection)
        assert gap < 0.05 * (2.0 * p.deflection)

    def test_tiny_wedge_passes_through(self):
        p = PrismSpec(1.51, 1e-10)
        out = trace_prism(BORESIGHT, p, 1.2)
        np.testing.assert_allclose(out, BORESIGHT, atol=1e-10)

    def test_opposite_rotor_angles_mirror(self):
        a = trace_prism(BORESIGHT, BASE, 0.0)
        b = trace_prism(BORESIGHT, BASE, np.pi)
        np.testing.assert_allclose(a[:2], -b[:2], atol=1e-10)
        np.testing.assert_allclose(a[2], b[2], atol=1e-10)

    def test_polar_angle_constant_over_rotor_sweep(self):
        angles = np.linspace(0.0, 2.0 * np.pi, 360, endpoint=False)
        out = trace_prism(BORESIGHT, BASE, angles)
        polar = polar_of(out)
        assert polar.max() - polar.min() < 1e-9
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)

    def test_snell_residual_at_both_faces(self):
        # reconstruct the two interfaces and check Snell holds at each
        rng = np.random.default_rng(3)
        sa, ca = np.sin(BASE.wedge_angle), np.cos(BASE.wedge_angle)
        n = BASE.refractive_index
        for _ in range(50):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            h, v = rng.uniform(-0.1, 0.1, size=2)
            d_in = angles_to_dir(h, v)
            n1 = np.array([sa * np.cos(ang), sa * np.sin(ang), -ca])
            mid = refract_interface(d_in, n1, 1.0, n)
            out = trace_prism(d_in, BASE, ang)
            assert abs(np.linalg.norm(np.cross(d_in, n1)) - n * np.linalg.norm(np.cross(mid, n1))) < 1e-12
            n2 = np.array([0.0, 0.0, -1.0])
            assert abs(n * np.linalg.norm(np.cross(mid, n2)) - np.linalg.norm(np.cross(out, n2))) < 1e-12


class TestSteerTwo:
    def test_parallel_reaches_rim(self):
        d = steer_two_prisms(BASE, BASE, 0.7, 0.7, model="paraxial")
        assert polar_of(d) == pytest.approx(2.0 * BASE.deflection, abs=1e-12)

    def test_antiparallel_returns_to_center(self):
        d = steer_two_prisms(BASE, BASE, 0.7, 0.7 + np.pi, model="paraxial")
        assert polar_of(d) < 1e-12

    def test_perpendicular_gives_sqrt2(self):
        d = steer_two_prisms(BASE, BASE, 0.0, np.pi / 2, model="paraxial")
        assert polar_of(d) == pytest.approx(np.sqrt(2.0) * BASE.deflection, abs=1e-12)

    def test_transverse_components_are_vector_sum(self):
        rng = np.random.default_rng(8)
        t1 = rng.uniform(0.0, 2 * np.pi, size=100)
        t2 = rng.uniform(0.0, 2 * np.pi, size=100)
        d = steer_two_prisms(BASE, BASE, t1, t2, model="paraxial")
        h, v = dir_to_angles(d)
        R = BASE.deflection
        np.testing.assert_allclose(h, -R * (np.cos(t1) + np.cos(t2)), atol=1e-12)
        np.testing.assert_allclose(v, -R * (np.sin(t1) + np.sin(t2)), atol=1e-12)
        # radius follows sqrt(2) R sqrt(1 + cos(delta))
        expect = np.sqrt(2.0) * R * np.sqrt(1.0 + np.cos(t1 - t2))
        np.testing.assert_allclose(polar_of(d), expect, atol=1e-9)

    def test_exact_polar_even_in_phase_difference(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            c = rng.uniform(0.0, 2 * np.pi)
            delta = rng.uniform(0.0, np.pi)
            a = steer_two_prisms(BASE, BASE, c + delta / 2, c - delta / 2, model="exact")
            b = steer_two_prisms(BASE, BASE, c - delta / 2, c + delta / 2, model="exact")
            assert abs(polar_of(a) - polar_of(b)) < 1e-10

    @pytest.mark.parametrize("model,tol", [("paraxial", 1e-12), ("exact", 1e-9)])
    def test_common_offset_rotates_output(self, model, tol):
        rng = np.random.default_rng(17)
        for _ in range(20):
            t1, t2, off = rng.uniform(0.0, 2 * np.pi, size=3)
            base = steer_two_prisms(BASE, BASE, t1, t2, model=model)
            moved = steer_two_prisms(BASE, BASE, t1 + off, t2 + off, model=model)
            c, s = np.cos(off), np.sin(off)
            rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            np.testing.assert_allclose(moved, rz @ base, atol=tol)

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            steer_two_prisms(BASE, BASE, 0.0, 0.0, model="thin")


def triple_prisms():
    n = 1.51
    pa = PrismSpec(n, np.deg2rad(14.15) / (n - 1.0))
    pc = PrismSpec(n, np.deg2rad(12.55) / (n - 1.0))
    return pa, pc


class TestSteerThree:
    def test_pair_must_be_identical(self):
        pa, pc = triple_prisms()
        with pytest.raises(ValueError):
            steer_three_prisms(pa, pc, pc, 0.0, 0.0)

    def test_quarter_phase_with_weak_third_prism_is_boresight(self):
        pa, _ = triple_prisms()
        weak = PrismSpec(1.51, 1e-10)
        d = steer_three_prisms(pa, pa, weak, np.pi / 2, 0.0, model="paraxial")
        assert polar_of(d) < 1e-9

    def test_aligned_phases_give_maximum_deflection(self):
        pa, pc = triple_prisms()
        d = steer_three_prisms(pa, pa, pc, 0.0, 0.0, model="paraxial")
        expect = 2.0 * pa.deflection + pc.deflection
        assert polar_of(d) == pytest.approx(expect, abs=1e-12)

    def test_pair_output_oscillates_along_x(self):
        pa, _ = triple_prisms()
        weak = PrismSpec(1.51, 1e-12)
        theta = np.linspace(0.0, 2 * np.pi, 97)
        d = steer_three_prisms(pa, pa, weak, theta, 0.0, model="paraxial")
        h, v = dir_to_angles(d)
        np.testing.assert_allclose(v, 0.0, atol=1e-9)
        np.testing.assert_allclose(h, -2.0 * pa.deflection * np.cos(theta), atol=1e-9)

    def test_envelope_matches_published_fov(self):
        pa, pc = triple_prisms()
        h, v = fov_envelope(pa, pa, pc)
        assert np.degrees(h) == pytest.approx(81.7, abs=1e-6)
        assert np.degrees(v) == pytest.approx(25.1, abs=1e-6)


class TestAngleHelpers:
    def test_roundtrip(self):
        rng = np.random.default_rng(23)
        h = rng.uniform(-0.5, 0.5, size=200)
        v = rng.uniform(-0.5, 0.5, size=200)
        d = angles_to_dir(h, v)
        np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-12)
        h2, v2 = dir_to_angles(d)
        np.testing.assert_allclose(h2, h, atol=1e-12)
        np.testing.assert_allclose(v2, v, atol=1e-12)

    def test_zero_maps_to_boresight(self):
        np.testing.assert_allclose(angles_to_dir(0.0, 0.0), BORESIGHT, atol=1e-15)
        h, v = dir_to_angles(BORESIGHT)
        assert h == 0.0 and v == 0.0
