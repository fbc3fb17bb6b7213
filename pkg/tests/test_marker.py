import math

import numpy as np
import pytest

import synth
from tacsim.errors import FitConvergenceError, ValidationError
from tacsim.marker import (MarkerField, MarkerLayoutSpec, MotionCoefficients,
                           MotionObservation, compose_motion,
                           dilate_displacement, fit_lambdas, flow_image,
                           read_displacement_table, render_markers,
                           shear_displacement, twist_displacement,
                           write_displacement_table)
from tacsim.scene import ContactState, SensorGeometry

AREA = (14.4, 19.2)


def contact_of(points, heights, **kw):
    return ContactState(np.asarray(points, float), np.asarray(heights, float), **kw)


class TestCoefficients:
    def test_validation(self):
        with pytest.raises(ValidationError):
            MotionCoefficients(lambda_d=0.0)
        with pytest.raises(ValidationError):
            MotionCoefficients(lambda_s=-1.0)
        with pytest.raises(ValidationError):
            MotionCoefficients(shear_cap_mm=0.0)
        with pytest.raises(ValidationError):
            MotionCoefficients(twist_cap_deg=181.0)


class TestMarkerField:
    def test_default_grid(self):
        field = MarkerField.grid()
        assert field.count == 63
        assert field.positions_mm[0] == pytest.approx((1.8, 2.4))
        assert field.positions_mm[-1] == pytest.approx((12.6, 16.8))

    def test_validation(self):
        with pytest.raises(ValidationError):
            MarkerField(np.array([[20.0, 1.0]]), AREA)
        with pytest.raises(ValidationError):
            MarkerField(np.array([[1.0, 1.0], [1.0, 1.0]]), AREA)
        with pytest.raises(ValidationError):
            MarkerField(np.array([[1.0, 1.0]]), AREA, radius_px=0.0)
        with pytest.raises(ValidationError):
            MarkerField(np.array([[1.0, 1.0]]), AREA, darkness=0.0)

    def test_layout_spec(self):
        grid = MarkerLayoutSpec().build(AREA)
        assert grid.count == 63
        expl = MarkerLayoutSpec(layout="explicit",
                                positions_mm=((1.0, 2.0), (3.0, 4.0))).build(AREA)
        assert expl.count == 2
        with pytest.raises(ValidationError):
            MarkerLayoutSpec(layout="hex")
        with pytest.raises(ValidationError):
            MarkerLayoutSpec(layout="explicit")


class TestDilate:
    COEFFS = MotionCoefficients()

    def test_empty_contact(self):
        out = dilate_displacement(np.array([[1.0, 1.0]]),
                                  contact_of(np.zeros((0, 2)), []), self.COEFFS)
        assert np.array_equal(out, np.zeros((1, 2)))

    def test_coincident_marker(self):
        out = dilate_displacement(np.array([[3.0, 4.0]]),
                                  contact_of([[3.0, 4.0]], [0.7]), self.COEFFS)
        assert np.array_equal(out, np.zeros((1, 2)))

    def test_single_point_frozen(self):
        # dh=0.5 at distance 2: 0.5 * 2 * exp(-1.25e-3 * 4), directed away
        out = dilate_displacement(np.array([[2.0, 0.0]]),
                                  contact_of([[0.0, 0.0]], [0.5]), self.COEFFS)
        assert out[0, 0] == pytest.approx(0.99501247919268232, abs=1e-12)
        assert out[0, 1] == 0.0

    def test_profile_peak_and_shape(self):
        # |disp|(rho) = rho exp(-lambda rho^2), peak at 1/sqrt(2 lambda)
        lam = self.COEFFS.lambda_d
        rho = np.arange(0.25, 40.0, 0.25)
        markers = np.column_stack((rho, np.zeros_like(rho)))
        out = dilate_displacement(markers, contact_of([[0.0, 0.0]], [1.0]),
                                  self.COEFFS)
        mag = np.hypot(out[:, 0], out[:, 1])
        want = rho * np.exp(-lam * rho * rho)
        assert np.allclose(mag, want, rtol=1e-9)
        peak = rho[np.argmax(mag)]
        assert abs(peak - 1.0 / math.sqrt(2 * lam)) <= 0.25 + 1e-12

    def test_radial_direction(self):
        rng = np.random.default_rng(8)
        c = np.array([5.0, 7.0])
        markers = c + rng.uniform(-6, 6, size=(50, 2))
        out = dilate_displacement(markers, contact_of([c], [0.8]), self.COEFFS)
        rel = markers - c
        cross = rel[:, 0] * out[:, 1] - rel[:, 1] * out[:, 0]
        assert np.abs(cross).max() < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(17)
        markers = rng.uniform(0, 14, size=(20, 2))
        pts = rng.uniform(2, 12, size=(30, 2))
        hts = rng.uniform(0.1, 0.6, size=30)
        out = dilate_displacement(markers, contact_of(pts, hts), self.COEFFS)
        want = synth.marker_disp_oracle("dilate", markers, self.COEFFS.lambda_d,
                                        contact_points=pts, contact_heights=hts)
        assert np.allclose(out, want, atol=1e-12)

    def test_stride_lattice_semantics(self):
        rng = np.random.default_rng(4)
        rows = rng.integers(0, 32, size=200)
        cols = rng.integers(0, 32, size=200)
        keep = np.unique(rows * 32 + cols)
        rows, cols = keep // 32, keep % 32
        hts = rng.uniform(0.1, 0.5, size=rows.size)
        pitch = 0.06
        pts = np.column_stack(((cols + 0.5) * pitch, (rows + 0.5) * pitch))
        contact = ContactState(pts, hts, pixel_rows=rows, pixel_cols=cols)
        markers = rng.uniform(0, 2, size=(10, 2))
        out = dilate_displacement(markers, contact, self.COEFFS, stride=4)
        sel = (rows % 4 == 0) & (cols % 4 == 0)
        want = synth.marker_disp_oracle("dilate", markers, self.COEFFS.lambda_d,
                                        contact_points=pts[sel],
                                        contact_heights=hts[sel] * 16.0)
        assert np.allclose(out, want, atol=1e-12)

    def test_stride_ignored_for_explicit_points(self):
        pts = np.array([[1.0, 1.0], [2.0, 2.0]])
        contact = contact_of(pts, [0.5, 0.5])
        markers = np.array([[0.0, 0.0]])
        a = dilate_displacement(markers, contact, self.COEFFS, stride=1)
        b = dilate_displacement(markers, contact, self.COEFFS, stride=4)
        assert np.array_equal(a, b)

    def test_stride_approximates_full_sum(self):
        # smooth height field: the rescaled lattice sum tracks the full one
        geom = SensorGeometry(64, 64, 0.06)
        xs, ys = geom.pixel_centers()
        z = 0.5 * np.exp(-((xs[None, :] - 1.9) ** 2 + (ys[:, None] - 1.9) ** 2))
        rows, cols = np.nonzero(z > 0.05)
        pts = np.column_stack(((cols + 0.5) * 0.06, (rows + 0.5) * 0.06))
        contact = ContactState(pts, z[rows, cols], pixel_rows=rows, pixel_cols=cols)
        markers = np.array([[0.5, 0.5], [3.0, 1.0], [1.9, 3.4]])
        full = dilate_displacement(markers, contact, self.COEFFS, stride=1)
        sub = dilate_displacement(markers, contact, self.COEFFS, stride=4)
        assert np.linalg.norm(sub - full) < 0.05 * np.linalg.norm(full)

    def test_bad_stride(self):
        with pytest.raises(ValidationError):
            dilate_displacement(np.array([[0.0, 0.0]]),
                                contact_of([[1.0, 1.0]], [0.5]), self.COEFFS,
                                stride=0)


class TestShear:
    COEFFS = MotionCoefficients()

    def test_spec_example(self):
        # |ds|=5 capped to 1, marker 10 mm out: exp(-2.1e-4 * 100) = 0.9792
        contact = contact_of([[0.0, 0.0]], [0.5], center=(0.0, 0.0),
                             shear_mm=(5.0, 0.0))
        out = shear_displacement(np.array([[10.0, 0.0]]), contact, self.COEFFS)
        assert out[0, 0] == pytest.approx(0.97921896, abs=1e-7)
        assert out[0, 1] == 0.0

    def test_cap_preserves_direction(self):
        contact = contact_of([[0.0, 0.0]], [0.5], center=(0.0, 0.0),
                             shear_mm=(3.0, 4.0))
        out = shear_displacement(np.array([[0.0, 0.0]]), contact, self.COEFFS)
        assert np.allclose(out[0], (0.6, 0.8), atol=1e-12)

    def test_below_cap_at_anchor_exact(self):
        contact = contact_of([[1.0, 1.0]], [0.5], center=(1.0, 1.0),
                             shear_mm=(0.3, 0.0))
        out = shear_displacement(np.array([[1.0, 1.0]]), contact, self.COEFFS)
        assert np.array_equal(out[0], (0.3, 0.0))

    def test_saturation_constant_beyond_cap(self):
        markers = np.random.default_rng(0).uniform(0, 10, size=(8, 2))
        outs = []
        for s in ((5.0, 0.0), (9.0, 0.0), (123.0, 0.0)):
            contact = contact_of([[4.0, 4.0]], [0.5], center=(4.0, 4.0),
                                 shear_mm=s)
            outs.append(shear_displacement(markers, contact, self.COEFFS))
        assert np.array_equal(outs[0], outs[1])
        assert np.array_equal(outs[0], outs[2])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        markers = rng.uniform(0, 14, size=(25, 2))
        contact = contact_of([[6.0, 8.0]], [0.5], center=(6.0, 8.0),
                             shear_mm=(0.4, -0.2))
        out = shear_displacement(markers, contact, self.COEFFS)
        want = synth.marker_disp_oracle("shear", markers, self.COEFFS.lambda_s,
                                        anchor=(6.0, 8.0), shear=(0.4, -0.2))
        assert np.allclose(out, want, atol=1e-12)

    def test_no_anchor(self):
        contact = contact_of(np.zeros((0, 2)), [], shear_mm=(0.5, 0.0))
        with pytest.raises(ValidationError):
            shear_displacement(np.array([[1.0, 1.0]]), contact, self.COEFFS)


class TestTwist:
    COEFFS = MotionCoefficients(twist_cap_deg=90.0)

    def test_right_angle_frozen(self):
        # theta=90, rel=(1,0): matrix gives (-1,1) scaled by exp(-3.8e-4)
        contact = contact_of([[0.0, 0.0]], [0.5], center=(0.0, 0.0),
                             twist_deg=90.0)
        out = twist_displacement(np.array([[1.0, 0.0]]), contact, self.COEFFS)
        assert out[0, 0] == pytest.approx(-0.99962007, abs=1e-7)
        assert out[0, 1] == pytest.approx(0.99962007, abs=1e-7)

    def test_cap_clamps_angle(self):
        markers = np.random.default_rng(1).uniform(0, 10, size=(6, 2))
        coeffs = MotionCoefficients()  # default cap 15 deg
        out_big = twist_displacement(
            markers, contact_of([[4.0, 4.0]], [0.5], center=(4.0, 4.0),
                                twist_deg=90.0), coeffs)
        out_cap = twist_displacement(
            markers, contact_of([[4.0, 4.0]], [0.5], center=(4.0, 4.0),
                                twist_deg=15.0), coeffs)
        assert np.array_equal(out_big, out_cap)

    def test_dot_and_cross_identities(self):
        rng = np.random.default_rng(9)
        g = np.array([5.0, 6.0])
        theta = 11.0
        markers = g + rng.uniform(-5, 5, size=(40, 2))
        contact = contact_of([g], [0.5], center=tuple(g), twist_deg=theta)
        out = twist_displacement(markers, contact, self.COEFFS)
        rel = markers - g
        r2 = np.sum(rel * rel, axis=1)
        w = np.exp(-self.COEFFS.lambda_t * r2)
        t = math.radians(theta)
        dot = np.sum(out * rel, axis=1)
        cross = rel[:, 0] * out[:, 1] - rel[:, 1] * out[:, 0]
        assert np.allclose(dot, (math.cos(t) - 1.0) * r2 * w, atol=1e-9)
        assert np.allclose(cross, math.sin(t) * r2 * w, atol=1e-9)

    def test_zero_cases(self):
        contact = contact_of([[2.0, 2.0]], [0.5], center=(2.0, 2.0),
                             twist_deg=0.0)
        out = twist_displacement(np.array([[4.0, 4.0]]), contact, self.COEFFS)
        assert np.array_equal(out, np.zeros((1, 2)))
        contact = contact_of([[2.0, 2.0]], [0.5], center=(2.0, 2.0),
                             twist_deg=30.0)
        out = twist_displacement(np.array([[2.0, 2.0]]), contact, self.COEFFS)
        assert np.array_equal(out, np.zeros((1, 2)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(14)
        markers = rng.uniform(0, 14, size=(25, 2))
        contact = contact_of([[6.0, 8.0]], [0.5], center=(6.0, 8.0),
                             twist_deg=12.0)
        out = twist_displacement(markers, contact, self.COEFFS)
        want = synth.marker_disp_oracle("twist", markers, self.COEFFS.lambda_t,
                                        anchor=(6.0, 8.0), twist_deg=12.0,
                                        twist_cap=90.0)
        assert np.allclose(out, want, atol=1e-12)


class TestCompose:
    def test_superposition_exact(self):
        rng = np.random.default_rng(3)
        field = MarkerField.grid()
        pts = rng.uniform(5, 9, size=(40, 2))
        hts = rng.uniform(0.1, 0.5, size=40)
        contact = contact_of(pts, hts, center=(7.0, 9.0), shear_mm=(0.3, -0.2),
                             twist_deg=8.0)
        coeffs = MotionCoefficients()
        res = compose_motion(field, contact, coeffs, stride=1)
        want = (dilate_displacement(field.positions_mm, contact, coeffs, stride=1)
                + shear_displacement(field.positions_mm, contact, coeffs)
                + twist_displacement(field.positions_mm, contact, coeffs))
        assert np.array_equal(res.displacement_mm, want)
        inside = ~res.clamped
        assert np.array_equal(res.positions_mm[inside],
                              (field.positions_mm + want)[inside])

    def test_no_load_identity(self):
        field = MarkerField.grid()
        contact = contact_of(np.zeros((0, 2)), [], center=(7.0, 9.0))
        res = compose_motion(field, contact, MotionCoefficients())
        assert np.array_equal(res.positions_mm, field.positions_mm)
        assert not res.clamped.any()

    def test_boundary_clamp_flags(self):
        field = MarkerField(np.array([[0.1, 0.1], [7.0, 9.0]]), AREA)
        contact = contact_of([[0.1, 0.1]], [0.5], center=(0.1, 0.1),
                             shear_mm=(-5.0, 0.0))
        res = compose_motion(field, contact, MotionCoefficients())
        assert res.clamped[0]
        assert res.positions_mm[0, 0] == 0.0
        assert not res.clamped[1]

    def test_rotational_equivariance(self):
        rng = np.random.default_rng(6)
        g = np.array([7.0, 9.0])
        coeffs = MotionCoefficients(twist_cap_deg=90.0)
        markers = g + rng.uniform(-4, 4, size=(30, 2))
        pts = g + rng.uniform(-2, 2, size=(25, 2))
        hts = rng.uniform(0.1, 0.5, size=25)
        shear = np.array([0.4, -0.1])
        twist = 9.0
        ang = math.radians(37.0)
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])

        def total(mk, cp, sv):
            contact = contact_of(cp, hts, center=tuple(g), shear_mm=tuple(sv),
                                 twist_deg=twist)
            return (dilate_displacement(mk, contact, coeffs)
                    + shear_displacement(mk, contact, coeffs)
                    + twist_displacement(mk, contact, coeffs))

        base = total(markers, pts, shear)
        rotated = total(g + (markers - g) @ rot.T, g + (pts - g) @ rot.T,
                        rot @ shear)
        assert np.allclose(rotated, base @ rot.T, atol=1e-9)


class TestRenderMarkers:
    def test_disc_pixel_count_frozen(self):
        img = np.full((40, 40, 3), 200, np.uint8)
        pos = [((20 + 0.5) * 0.06, (20 + 0.5) * 0.06)]  # a pixel center
        out = render_markers(img, pos, 0.06, radius_px=2.0, darkness=1.0)
        # coverage >= 0.5 darkens a 13-pixel disc at half level or below
        assert (out[..., 0] <= 100).sum() == 13
        assert out[20, 20, 0] == 0

    def test_empty_and_untouched_pixels(self):
        img = np.full((40, 40, 3), 200, np.uint8)
        assert np.array_equal(render_markers(img, np.zeros((0, 2)), 0.06), img)
        out = render_markers(img, [(1.23, 1.23)], 0.06)
        far = out[30:, 30:]
        assert (far == 200).all()

    def test_coincident_markers_idempotent(self):
        img = np.full((40, 40, 3), 200, np.uint8)
        one = render_markers(img, [(1.23, 1.23)], 0.06, darkness=1.0)
        two = render_markers(img, [(1.23, 1.23), (1.23, 1.23)], 0.06, darkness=1.0)
        assert np.array_equal(one, two)

    def test_validation(self):
        with pytest.raises(ValidationError):
            render_markers(np.zeros((4, 4), np.uint8), [(0.1, 0.1)], 0.06)
        with pytest.raises(ValidationError):
            render_markers(np.zeros((4, 4, 3), np.uint8), [(0.1, 0.1)], 0.06,
                           darkness=1.5)


class TestFlowImage:
    GEOM = SensorGeometry(80, 80, 0.06)

    def test_no_motion_no_arrows(self):
        m = np.array([[2.0, 2.0], [3.0, 3.0]])
        img = flow_image(m, m, self.GEOM)
        assert img.shape == (80, 80, 3)
        red = (img[..., 0] > 150) & (img[..., 1] < 80)
        assert not red.any()

    def test_arrows_drawn_when_moved(self):
        m = np.array([[2.0, 2.0]])
        img = flow_image(m, m + (0.5, 0.0), self.GEOM, scale=2.0)
        red = (img[..., 0] > 150) & (img[..., 1] < 80)
        assert red.any()

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            flow_image(np.zeros((2, 2)), np.zeros((3, 2)), self.GEOM)


def synth_observations(kind, coeffs, rng, n=6):
    field = MarkerField.grid()
    obs = []
    for _ in range(n):
        g = rng.uniform(5, 10, size=2)
        if kind == "dilate":
            pts = g + rng.uniform(-1.5, 1.5, size=(30, 2))
            hts = rng.uniform(0.1, 0.6, size=30)
            contact = contact_of(pts, hts)
            disp = synth.marker_disp_oracle("dilate", field.positions_mm,
                                            coeffs.lambda_d, contact_points=pts,
                                            contact_heights=hts)
        elif kind == "shear":
            vec = rng.uniform(-0.8, 0.8, size=2)
            contact = contact_of([g], [0.5], center=tuple(g), shear_mm=tuple(vec))
            disp = synth.marker_disp_oracle("shear", field.positions_mm,
                                            coeffs.lambda_s, anchor=g, shear=vec)
        else:
            ang = rng.uniform(-14, 14)
            contact = contact_of([g], [0.5], center=tuple(g), twist_deg=ang)
            disp = synth.marker_disp_oracle("twist", field.positions_mm,
                                            coeffs.lambda_t, anchor=g,
                                            twist_deg=ang)
        obs.append(MotionObservation(kind, contact, field.positions_mm.copy(),
                                     disp))
    return obs


class TestFitLambdas:
    TRUE = MotionCoefficients()

    def all_observations(self, rng, noise=0.0):
        obs = []
        for kind in ("dilate", "shear", "twist"):
            obs.extend(synth_observations(kind, self.TRUE, rng))
        if noise:
            for o in obs:
                scale = noise * np.sqrt(np.mean(o.displacement_mm ** 2))
                o.displacement_mm[:] = o.displacement_mm + rng.normal(
                    0.0, scale, o.displacement_mm.shape)
        return obs

    def test_noiseless_round_trip_within_2_percent(self):
        rng = np.random.default_rng(23)
        obs = self.all_observations(rng)
        init = MotionCoefficients(lambda_d=self.TRUE.lambda_d * 3,
                                  lambda_s=self.TRUE.lambda_s * 3,
                                  lambda_t=self.TRUE.lambda_t * 3)
        fitted, report = fit_lambdas(obs, init=init)
        assert fitted.lambda_d == pytest.approx(self.TRUE.lambda_d, rel=0.02)
        assert fitted.lambda_s == pytest.approx(self.TRUE.lambda_s, rel=0.02)
        assert fitted.lambda_t == pytest.approx(self.TRUE.lambda_t, rel=0.02)
        assert all(v < 1e-6 for v in report.rms_mm.values())
        # loss non-increasing over accepted iterations
        for trace in report.traces.values():
            assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_noisy_round_trip_within_10_percent(self):
        rng = np.random.default_rng(29)
        obs = self.all_observations(rng, noise=0.01)
        init = MotionCoefficients(lambda_d=self.TRUE.lambda_d * 2,
                                  lambda_s=self.TRUE.lambda_s * 2,
                                  lambda_t=self.TRUE.lambda_t * 2)
        fitted, _ = fit_lambdas(obs, init=init)
        assert fitted.lambda_d == pytest.approx(self.TRUE.lambda_d, rel=0.10)
        assert fitted.lambda_s == pytest.approx(self.TRUE.lambda_s, rel=0.10)
        assert fitted.lambda_t == pytest.approx(self.TRUE.lambda_t, rel=0.10)

    def test_far_off_init_recovers(self):
        # stock digit lambdas -> desk-scale truth is a 100-6000x jump; an
        # uncapped first Newton step used to land where every falloff
        # underflows and the fit died with a zero jacobian
        truth = MotionCoefficients(lambda_d=8.0, lambda_s=0.02, lambda_t=0.03)
        rng = np.random.default_rng(31)
        obs = []
        for kind in ("dilate", "shear", "twist"):
            obs.extend(synth_observations(kind, truth, rng))
        fitted, _ = fit_lambdas(obs, init=MotionCoefficients())
        assert fitted.lambda_d == pytest.approx(truth.lambda_d, rel=0.02)
        assert fitted.lambda_s == pytest.approx(truth.lambda_s, rel=0.02)
        assert fitted.lambda_t == pytest.approx(truth.lambda_t, rel=0.02)

    def test_too_few_observations(self):
        rng = np.random.default_rng(1)
        obs = self.all_observations(rng)[:10]
        with pytest.raises(ValidationError):
            fit_lambdas(obs)

    def test_degenerate_all_zero(self):
        rng = np.random.default_rng(2)
        obs = self.all_observations(rng)
        for o in obs:
            if o.kind == "shear":
                o.displacement_mm[:] = 0.0
                object.__setattr__(o.contact, "shear_mm", (0.0, 0.0))
        with pytest.raises(FitConvergenceError) as err:
            fit_lambdas(obs)
        assert err.value.best is not None
        assert len(err.value.trace) >= 1

    def test_report_text(self):
        rng = np.random.default_rng(3)
        _, report = fit_lambdas(self.all_observations(rng))
        text = report.to_text()
        assert "dilate: rms" in text and "twist: rms" in text


class TestDisplacementTable:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(31)
        pos = rng.uniform(0, 14, size=(12, 2))
        disp = rng.normal(0, 0.3, size=(12, 2))
        path = tmp_path / "table.txt"
        write_displacement_table(path, pos, disp)
        got_pos, got_disp = read_displacement_table(path)
        assert np.array_equal(got_pos, pos)
        assert np.array_equal(got_disp, disp)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "table.txt"
        path.write_text("# header\n\n0 1.0 2.0 0.1 0.2\n# mid\n1 3.0 4.0 0.0 0.0\n")
        pos, disp = read_displacement_table(path)
        assert pos.shape == (2, 2)

    def test_bad_rows(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0 1.0 2.0 0.1\n")
        with pytest.raises(ValidationError, match="line 1"):
            read_displacement_table(path)
        path.write_text("0 1.0 2.0 0.1 oops\n")
        with pytest.raises(ValidationError, match="non-numeric"):
            read_displacement_table(path)

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(ValidationError):
            write_displacement_table(tmp_path / "x.txt", np.zeros((3, 2)),
                                     np.zeros((2, 2)))
