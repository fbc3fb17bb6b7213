import math

import numpy as np
import pytest

import synth
from tacsim.errors import (DegenerateGeometryError, SingularProjectionError,
                           ValidationError)
from tacsim.scene import ContactPose, HeightMap, IndenterShape, SensorGeometry, \
    render_height_map
from tacsim.shadow import (BallObservation, LightRig, LightSource, ShadowPlane,
                           calibrate_lights, cast_shadow_mask,
                           composite_shadows, directional_shadow_matrix,
                           find_shadow_vertex, nearest_point_of_lines,
                           point_shadow_matrix, project_directional_shadow,
                           project_point_shadow, tangent_ray)

GEOM = SensorGeometry()


def rand_plane(rng):
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    return ShadowPlane(tuple(n), float(rng.uniform(-3, 3)))


class TestTypes:
    def test_plane_normal_must_be_unit(self):
        with pytest.raises(ValidationError):
            ShadowPlane((0.0, 0.0, 2.0), 0.0)

    def test_light_validation(self):
        with pytest.raises(ValidationError):
            LightSource("spot")
        with pytest.raises(ValidationError):
            LightSource("directional", direction=(0.0, 0.0, -2.0))
        with pytest.raises(ValidationError):
            LightSource("point", tint=(1.2, 0.0, 0.0))
        with pytest.raises(ValidationError):
            LightSource("point", strength=1.5)


class TestProjection:
    def test_point_frozen_example(self):
        # light two units above the origin, point halfway down and out
        q = project_point_shadow((1.0, 0.0, 1.0), (0.0, 0.0, 2.0))
        assert np.allclose(q, (2.0, 0.0, 0.0), atol=1e-12)

    def test_directional_frozen_example(self):
        l = (1.0 / math.sqrt(2), 0.0, -1.0 / math.sqrt(2))
        q = project_directional_shadow((0.0, 0.0, 1.0), l)
        assert np.allclose(q, (1.0, 0.0, 0.0), atol=1e-12)

    def test_matrix_matches_parametric_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            plane = rand_plane(rng)
            p = rng.uniform(-5, 5, 3)
            s = rng.uniform(-5, 5, 3)
            # keep the configuration clearly non-degenerate
            if abs(plane.u @ (p - s)) < 0.1 or abs(plane.u @ s + plane.d) < 0.1:
                continue
            got = project_point_shadow(p, s, plane)
            want = synth.ray_plane_point(p, s, plane.u, plane.d)
            assert np.linalg.norm(got - want) <= 1e-9 * max(1.0, np.linalg.norm(want))
            assert abs(plane.u @ got + plane.d) < 1e-6
            l = rng.normal(size=3)
            l /= np.linalg.norm(l)
            if abs(plane.u @ l) < 0.1:
                continue
            got = project_directional_shadow(p, l, plane)
            want = synth.ray_plane_directional(p, l, plane.u, plane.d)
            assert np.linalg.norm(got - want) <= 1e-9 * max(1.0, np.linalg.norm(want))
            assert abs(plane.u @ got + plane.d) < 1e-6

    def test_plane_points_are_fixed(self):
        rng = np.random.default_rng(7)
        plane = rand_plane(rng)
        # construct a point exactly on the plane
        p = rng.uniform(-2, 2, 3)
        p = p - (plane.u @ p + plane.d) * plane.u
        q = project_point_shadow(p, (5.0, 1.0, 9.0), plane)
        assert np.allclose(q, p, atol=1e-9)
        q = project_directional_shadow(p, (0.0, 0.0, -1.0), plane)
        assert np.allclose(q, p, atol=1e-9)

    def test_batch_shape(self):
        pts = np.random.default_rng(1).uniform(0, 1, size=(17, 3)) + (0, 0, 1)
        q = project_point_shadow(pts, (0.0, 0.0, 9.0))
        assert q.shape == (17, 3)
        q = project_directional_shadow(pts, (0.0, 0.0, -1.0))
        assert q.shape == (17, 3)

    def test_degenerate_geometry(self):
        with pytest.raises(DegenerateGeometryError):
            point_shadow_matrix((1.0, 2.0, 0.0), ShadowPlane())
        with pytest.raises(SingularProjectionError):
            directional_shadow_matrix((1.0, 0.0, 0.0), ShadowPlane())
        with pytest.raises(SingularProjectionError):
            # ray from light to point runs parallel to the plane
            project_point_shadow((1.0, 0.0, 1.0), (0.0, 0.0, 1.0))


def hemisphere_map(center, radius, geom=GEOM):
    """Upper hemisphere of a ball resting centered on the plane."""
    xs, ys = geom.pixel_centers()
    rho2 = (xs[None, :] - center[0]) ** 2 + (ys[:, None] - center[1]) ** 2
    z = np.sqrt(np.maximum(radius * radius - rho2, 0.0))
    return HeightMap(z.astype(np.float32), geom.pitch_mm)


class TestCastShadowMask:
    def test_empty_contact(self):
        hm = HeightMap(np.zeros((20, 20), np.float32), 0.06)
        mask = cast_shadow_mask(hm, LightSource("point", (0.5, 0.5, 5.0)))
        assert mask.shape == (20, 20)
        assert not mask.any()

    def test_range_and_dtype(self):
        hm = render_height_map(IndenterShape.sphere(2.0),
                               ContactPose((7.17, 9.57), 0.5), GEOM)
        mask = cast_shadow_mask(hm, LightSource("point", (-3.2, 3.6, 7.0)))
        assert mask.dtype == np.float32
        assert mask.min() >= 0.0 and mask.max() <= 1.0
        assert mask.sum() > 0

    def test_matches_scipy_oracle(self):
        hm = render_height_map(IndenterShape.sphere(2.0),
                               ContactPose((7.17, 9.57), 0.5), GEOM)
        light = LightSource("point", (-3.2, 3.6, 7.0))
        got = cast_shadow_mask(hm, light)
        rows, cols = np.nonzero(hm.data > 0.05)
        want = synth.shadow_mask_oracle(
            (320, 240), 0.06, rows, cols, hm.data[rows, cols],
            {"kind": "point", "position": np.array([-3.2, 3.6, 7.0])})
        assert np.allclose(got, want, atol=1e-5)

    def test_contact_core_not_self_shadowed(self):
        hm = render_height_map(IndenterShape.sphere(2.0),
                               ContactPose((7.17, 9.57), 0.5), GEOM)
        mask = cast_shadow_mask(hm, LightSource("point", (-3.2, 3.6, 7.0)))
        assert mask[155:165, 115:125].max() == 0.0

    def test_shadow_falls_away_from_light(self):
        hm = render_height_map(IndenterShape.sphere(2.0),
                               ContactPose((7.17, 9.57), 0.5), GEOM)
        mask = cast_shadow_mask(hm, LightSource("point", (-3.2, 3.6, 7.0)))
        rows, cols = np.nonzero(mask > 0.5)
        centroid = np.array([(cols.mean() + 0.5) * 0.06, (rows.mean() + 0.5) * 0.06])
        away = np.array([7.17 + 3.2, 9.57 - 3.6])
        away /= np.linalg.norm(away)
        assert (centroid - (7.17, 9.57)) @ away > 0.2


class TestComposite:
    def test_frozen_attenuation(self):
        img = np.full((4, 4, 3), 200, np.uint8)
        mask = np.ones((4, 4), np.float32)
        light = LightSource("point", strength=0.5, tint=(0.8, 0.8, 0.8))
        out = composite_shadows(img, [mask], [light])
        assert (out == 120).all()

    def test_multiplicative_stacking(self):
        img = np.full((4, 4, 3), 200, np.uint8)
        mask = np.ones((4, 4), np.float32)
        light = LightSource("point", strength=0.5, tint=(1.0, 1.0, 1.0))
        out = composite_shadows(img, [mask, mask], [light, light])
        assert (out == 50).all()

    def test_zero_mask_is_identity(self):
        img = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
        out = composite_shadows(img, [np.zeros((4, 4), np.float32)],
                                [LightSource("point")])
        assert np.array_equal(out, img)

    def test_validation(self):
        img = np.zeros((4, 4, 3), np.uint8)
        light = LightSource("point")
        with pytest.raises(ValidationError):
            composite_shadows(img, [np.zeros((4, 4))], [light, light])
        with pytest.raises(ValidationError):
            composite_shadows(img, [np.zeros((5, 4))], [light])
        with pytest.raises(ValidationError):
            composite_shadows(img, [np.full((4, 4), 1.5)], [light])


class TestTangentRay:
    def test_elevation_30_deg(self):
        # vertex at distance 2r: grazing elevation arcsin(r / 2r) = 30 deg
        anchor, d = tangent_ray((4.0, 0.0), 1.0, (2.0, 0.0))
        assert np.allclose(anchor, (2.0, 0.0, 0.0))
        assert d[2] == pytest.approx(0.5, abs=1e-12)
        assert math.degrees(math.asin(d[2])) == pytest.approx(30.0)

    def test_elevation_45_deg(self):
        r = 1.5
        anchor, d = tangent_ray((0.0, 0.0), r, (r * math.sqrt(2), 0.0))
        assert d[2] == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_ray_passes_through_light(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            light = np.array([rng.uniform(-5, 20), rng.uniform(-5, 25),
                              rng.uniform(5.0, 12.0)])
            center = np.array([rng.uniform(4, 10), rng.uniform(5, 14)])
            r = rng.uniform(1.0, 3.0)
            v = synth.point_vertex(center, r, light)
            anchor, d = tangent_ray(center, r, v)
            off = light - anchor
            perp = off - (off @ d) * d
            assert np.linalg.norm(perp) < 1e-9

    def test_vertex_inside_ball_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            tangent_ray((0.0, 0.0), 2.0, (1.0, 0.0))


class TestNearestPoint:
    def test_skew_pair_frozen(self):
        point, rms = nearest_point_of_lines(
            [(0.0, 0.0, 0.0), (0.0, 1.0, 0.0)],
            [(1.0, 0.0, 0.0), (0.0, 0.0, 1.0)])
        assert np.allclose(point, (0.0, 0.5, 0.0), atol=1e-12)
        assert rms == pytest.approx(0.5, abs=1e-12)

    def test_exact_intersection(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-2, 2, 3)
        anchors, dirs = [], []
        for _ in range(4):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            anchors.append(x - rng.uniform(1, 5) * d)
            dirs.append(d)
        point, rms = nearest_point_of_lines(anchors, dirs)
        assert np.allclose(point, x, atol=1e-9)
        assert rms < 1e-9

    def test_parallel_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            nearest_point_of_lines([(0, 0, 0), (0, 1, 0)],
                                   [(1, 0, 0), (1, 0, 0)])

    def test_needs_two_lines(self):
        with pytest.raises(ValidationError):
            nearest_point_of_lines([(0, 0, 0)], [(1, 0, 0)])


class TestCalibrateLights:
    def make_rig(self, lights):
        return LightRig(tuple(lights))

    def test_point_round_trip_exact_vertices(self):
        true = np.array([4.0, 16.0, 7.0])
        rig = self.make_rig([LightSource("point", (5.0, 5.0, 5.0))])
        centers = [(7.0, 6.0), (10.0, 9.0), (5.0, 11.0), (9.5, 13.0)]
        obs = []
        for c in centers:
            v = synth.point_vertex(c, 2.0, true)
            obs.append(BallObservation(c, 2.0, (tuple(v),)))
        got, report = calibrate_lights(obs, rig)
        assert np.allclose(got.lights[0].position_mm, true, atol=1e-8)
        assert report.entries[0].residual < 1e-8
        assert report.entries[0].units == "mm"
        # photometry passes through from the template
        assert got.lights[0].strength == rig.lights[0].strength

    def test_directional_round_trip_exact_vertices(self):
        l = np.array([0.5, 0.2, -0.8])
        l /= np.linalg.norm(l)
        rig = self.make_rig([LightSource("directional",
                                         direction=(0.0, 0.0, -1.0))])
        obs = []
        for c in [(6.0, 6.0), (8.0, 12.0)]:
            v = synth.directional_vertex(c, 1.5, l)
            obs.append(BallObservation(c, 1.5, (tuple(v),)))
        got, report = calibrate_lights(obs, rig)
        assert np.allclose(got.lights[0].direction, l, atol=1e-9)
        assert report.entries[0].residual < 1e-6
        assert report.entries[0].units == "deg"

    def test_missing_vertices_are_skipped(self):
        true = np.array([4.0, 16.0, 7.0])
        rig = self.make_rig([LightSource("point", (5.0, 5.0, 5.0))])
        obs = []
        for i, c in enumerate([(7.0, 6.0), (10.0, 9.0), (5.0, 11.0)]):
            v = None if i == 1 else tuple(synth.point_vertex(c, 2.0, true))
            obs.append(BallObservation(c, 2.0, (v,)))
        got, report = calibrate_lights(obs, rig)
        assert report.entries[0].n_rays == 2
        assert np.allclose(got.lights[0].position_mm, true, atol=1e-8)

    def test_too_few_rays(self):
        rig = self.make_rig([LightSource("point", (5.0, 5.0, 5.0))])
        obs = [BallObservation((7.0, 6.0), 2.0, ((8.0, 4.0),))]
        with pytest.raises(ValidationError):
            calibrate_lights(obs, rig)
        rig = self.make_rig([LightSource("directional")])
        with pytest.raises(ValidationError):
            calibrate_lights([BallObservation((7.0, 6.0), 2.0, (None,))], rig)

    def test_report_text(self):
        rig = self.make_rig([LightSource("directional",
                                         direction=(0.0, 0.0, -1.0))])
        obs = [BallObservation((6.0, 6.0), 1.5, ((8.0, 6.0),))]
        _, report = calibrate_lights(obs, rig)
        text = report.to_text()
        assert "light 0 (directional): 1 rays" in text


class TestFindShadowVertex:
    def test_synthetic_blob(self):
        mask = np.zeros((50, 60), np.float32)
        mask[10, 40] = 1.0  # farthest along +x
        mask[10, 30] = 1.0
        mask[40, 10] = 1.0  # off-cone pixel, even farther
        got = find_shadow_vertex(mask, ((20 + 0.5) * 0.1, (10 + 0.5) * 0.1),
                                 toward_deg=0.0, pitch_mm=0.1)
        assert got == pytest.approx(((40 + 0.5) * 0.1, (10 + 0.5) * 0.1))

    def test_none_when_empty_or_border(self):
        mask = np.zeros((50, 60), np.float32)
        assert find_shadow_vertex(mask, (1.0, 1.0), 0.0, 0.1) is None
        mask[10, 59] = 1.0  # touches the border: clipped shadow
        assert find_shadow_vertex(mask, (1.0, 1.05), 0.0, 0.1) is None
        mask[:] = 0
        mask[40, 10] = 1.0
        assert find_shadow_vertex(mask, (2.0, 1.0), 0.0, 0.1,
                                  cone_half_angle_deg=30.0) is None

    def test_point_light_recovery_from_hemisphere_masks(self):
        # a resting ball's rasterized shadow pins the tangent geometry:
        # recovered light within 1 mm of truth despite pixel quantization
        true = (4.0, 16.0, 7.0)
        light = LightSource("point", true)
        rig = LightRig((light,))
        obs = []
        for c in [(7.0, 6.0), (10.0, 9.0), (5.5, 10.5), (9.5, 12.5)]:
            hm = hemisphere_map(c, 2.0)
            mask = cast_shadow_mask(hm, light)
            toward = math.degrees(math.atan2(c[1] - true[1], c[0] - true[0]))
            v = find_shadow_vertex(mask, c, toward, 0.06)
            assert v is not None
            obs.append(BallObservation(c, 2.0, (v,)))
        got, report = calibrate_lights(obs, rig)
        assert np.linalg.norm(np.array(got.lights[0].position_mm) - true) < 1.0

    def test_directional_recovery_from_hemisphere_masks(self):
        # elevation from a rasterized vertex is quantization-limited
        # (d elev / d vertex ~ 10 deg/mm at this geometry), so the bound
        # here is looser than the noiseless round-trip above
        l = np.array([0.64, 0.48, -0.6])
        light = LightSource("directional", direction=tuple(l))
        rig = LightRig((light,))
        obs = []
        toward = math.degrees(math.atan2(l[1], l[0]))
        for c in [(6.0, 6.0), (4.0, 9.0), (7.0, 11.0)]:
            hm = hemisphere_map(c, 2.5)
            mask = cast_shadow_mask(hm, light)
            v = find_shadow_vertex(mask, c, toward, 0.06)
            assert v is not None
            obs.append(BallObservation(c, 2.5, (v,)))
        got, _ = calibrate_lights(obs, rig)
        ang = math.degrees(math.acos(np.clip(np.array(got.lights[0].direction) @ l, -1, 1)))
        assert ang < 2.0
