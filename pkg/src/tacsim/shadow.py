"""Planar shadow casting and light calibration.

Shadows are cast by projecting raised surface points onto the gel plane
with homogeneous projection matrices, one per light. Calibration inverts
the geometry: the shadow vertex of a pressed ball fixes a tangent ray
that grazes the ball top, and rays from several presses intersect at the
light. Lengths in mm throughout; the gel plane is u . q + d = 0 with the
default u = (0, 0, 1), d = 0.
"""

from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .errors import DegenerateGeometryError, SingularProjectionError, ValidationError

FEATHER_SIGMA_PX = 2.0
_FEATHER_KSIZE = 13  # 2 * ceil(3 sigma) + 1


@dataclass(frozen=True)
class ShadowPlane:
    """Plane u . q + d = 0 receiving the shadows."""

    normal: tuple = (0.0, 0.0, 1.0)
    offset_mm: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,):
            raise ValidationError("plane normal must be a 3-vector", field="shadow.plane_normal")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValidationError("plane normal must be unit length", field="shadow.plane_normal")

    @property
    def u(self):
        return np.asarray(self.normal, dtype=np.float64)

    @property
    def d(self):
        return float(self.offset_mm)


@dataclass(frozen=True)
class LightSource:
    """Point or directional light with shadow photometry.

    position_mm applies to point lights; direction is the unit travel
    direction of a directional light (pointing at the gel). tint gives
    per-channel shadow attenuation in [0, 1], strength the overall
    shadow opacity in [0, 1].
    """

    kind: str
    position_mm: tuple = (0.0, 0.0, 10.0)
    direction: tuple = (0.0, 0.0, -1.0)
    tint: tuple = (1.0, 1.0, 1.0)
    strength: float = 0.5

    def __post_init__(self):
        if self.kind not in ("point", "directional"):
            raise ValidationError(f"unknown light kind {self.kind!r}", field="light.kind")
        if len(self.position_mm) != 3:
            raise ValidationError("position must be a 3-vector", field="light.position_mm")
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or (self.kind == "directional"
                               and abs(np.linalg.norm(d) - 1.0) > 1e-9):
            raise ValidationError("direction must be a unit 3-vector", field="light.direction")
        t = np.asarray(self.tint, dtype=np.float64)
        if t.shape != (3,) or (t < 0).any() or (t > 1).any():
            raise ValidationError("tint channels must lie in [0, 1]", field="light.tint")
        if not (0.0 <= self.strength <= 1.0):
            raise ValidationError("strength must lie in [0, 1]", field="light.strength")


@dataclass(frozen=True)
class LightRig:
    """The sensor's lights plus the shared shadow plane."""

    lights: tuple
    plane: ShadowPlane = field(default_factory=ShadowPlane)

    def __post_init__(self):
        object.__setattr__(self, "lights", tuple(self.lights))


def point_shadow_matrix(s, plane):
    """4x4 homogeneous matrix projecting points onto `plane` from light s.

    M = (u . s + d) I - [s; 1] [u; d]^T, applied as q' = M [p; 1], then
    q = q'[:3] / q'[3]. The light must sit strictly off the plane.
    """
    s = np.asarray(s, dtype=np.float64)
    pi = np.append(plane.u, plane.d)
    sh = np.append(s, 1.0)
    k = float(pi @ sh)
    if abs(k) < 1e-12:
        raise DegenerateGeometryError("point light lies on the shadow plane")
    return k * np.eye(4) - np.outer(sh, pi)


def directional_shadow_matrix(l, plane):
    """3x4 matrix projecting points along direction l onto `plane`.

    M = ((u . l) I3 - l u^T | -d l) / (u . l); q = M [p; 1]. The
    direction must not be parallel to the plane.
    """
    l = np.asarray(l, dtype=np.float64)
    u, d = plane.u, plane.d
    ul = float(u @ l)
    if abs(ul) < 1e-12:
        raise SingularProjectionError("light direction is parallel to the shadow plane")
    m = np.hstack((ul * np.eye(3) - np.outer(l, u), (-d * l)[:, None]))
    return m / ul


def project_point_shadow(p, s, plane=ShadowPlane()):
    """Project point(s) p from a point light s onto the plane.

    p may be (3,) or (N, 3); the result matches. Rays parallel to the
    plane (homogeneous w ~ 0) raise SingularProjectionError.
    """
    m = point_shadow_matrix(s, plane)
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    ph = np.hstack((np.atleast_2d(p), np.ones((np.atleast_2d(p).shape[0], 1))))
    q = ph @ m.T
    w = q[:, 3]
    scale = abs(float(np.append(plane.u, plane.d) @ np.append(np.asarray(s, float), 1.0)))
    if (np.abs(w) < 1e-12 * max(scale, 1.0)).any():
        raise SingularProjectionError("projection ray parallel to the shadow plane")
    out = q[:, :3] / w[:, None]
    return out[0] if single else out


def project_directional_shadow(p, l, plane=ShadowPlane()):
    """Project point(s) p along direction l onto the plane."""
    m = directional_shadow_matrix(l, plane)
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    ph = np.hstack((np.atleast_2d(p), np.ones((np.atleast_2d(p).shape[0], 1))))
    out = ph @ m.T
    return out[0] if single else out


def cast_shadow_mask(hm, light, plane=ShadowPlane(), threshold_mm=0.05):
    """Rasterize the shadow of the raised surface for one light.

    Contact pixels (height above threshold) are lifted to 3-D, projected
    onto the plane, rasterized, morphologically closed to fill sampling
    pinholes, cleared inside the contact silhouette (the indenter hides
    its own shadow) and feathered by a 2 px Gaussian. Returns float32
    (H, W) in [0, 1].
    """
    mask = np.zeros(hm.data.shape, np.float32)
    contact = hm.data > threshold_mm
    rows, cols = np.nonzero(contact)
    if rows.size == 0:
        return mask
    pitch = hm.pitch_mm
    p = np.column_stack(((cols + 0.5) * pitch, (rows + 0.5) * pitch,
                         hm.data[rows, cols].astype(np.float64)))
    if light.kind == "point":
        q = project_point_shadow(p, light.position_mm, plane)
    else:
        q = project_directional_shadow(p, light.direction, plane)
    qi = np.floor(q[:, 0] / pitch).astype(np.int64)
    qj = np.floor(q[:, 1] / pitch).astype(np.int64)
    keep = (qi >= 0) & (qi < hm.width) & (qj >= 0) & (qj < hm.height)
    raster = np.zeros(hm.data.shape, np.uint8)
    raster[qj[keep], qi[keep]] = 1
    raster = cv2.morphologyEx(raster, cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))
    raster[contact] = 0
    mask = cv2.GaussianBlur(raster.astype(np.float32),
                            (_FEATHER_KSIZE, _FEATHER_KSIZE), FEATHER_SIGMA_PX,
                            borderType=cv2.BORDER_CONSTANT)
    return np.clip(mask, 0.0, 1.0)


def composite_shadows(image, masks, lights):
    """Darken an image under per-light shadow masks.

    out = image * prod_i (1 - strength_i * mask_i * tint_i), per channel,
    rounded and clamped to [0, 255]. Masks align with lights.
    """
    if len(masks) != len(lights):
        raise ValidationError("need one mask per light", field="masks")
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("image must be 8-bit RGB", field="image")
    factor = np.ones(img.shape, np.float32)
    for mask, light in zip(masks, lights):
        mask = np.asarray(mask, dtype=np.float32)
        if mask.shape != img.shape[:2]:
            raise ValidationError("mask shape must match the image", field="masks")
        if (mask < 0).any() or (mask > 1).any():
            raise ValidationError("mask values must lie in [0, 1]", field="masks")
        tint = np.asarray(light.tint, dtype=np.float32)
        factor *= 1.0 - light.strength * mask[:, :, None] * tint[None, None, :]
    out = np.rint(img.astype(np.float32) * factor)
    return np.clip(out, 0, 255).astype(np.uint8)


def tangent_ray(ball_center_mm, ball_radius_mm, vertex_mm):
    """Ray from a shadow vertex grazing the top of a pressed ball.

    The ball of radius r sits centered at the plane (center at height 0);
    the shadow vertex q_s is where the ball's shadow ends. The ray leaves
    (q_s, 0) toward the ball's horizon: in-plane direction o - q_s,
    elevation arcsin(r / ||o - q_s||). The light lies along this ray.
    """
    o = np.asarray(ball_center_mm, dtype=np.float64)
    q = np.asarray(vertex_mm, dtype=np.float64)
    if o.shape != (2,) or q.shape != (2,):
        raise ValidationError("ball center and vertex must be 2-D points", field="tangent_ray")
    if not (ball_radius_mm > 0):
        raise ValidationError("ball radius must be positive", field="ball_radius_mm")
    off = o - q
    dist = float(np.linalg.norm(off))
    if dist <= ball_radius_mm:
        raise DegenerateGeometryError(
            f"shadow vertex at distance {dist:.4f} mm lies on or inside the "
            f"ball silhouette (radius {ball_radius_mm} mm)")
    rise = dist * ball_radius_mm / np.sqrt(dist * dist - ball_radius_mm ** 2)
    direction = np.array([off[0], off[1], rise])
    direction /= np.linalg.norm(direction)
    anchor = np.array([q[0], q[1], 0.0])
    return anchor, direction


def nearest_point_of_lines(anchors, directions):
    """Least-squares point closest to a bundle of 3-D lines.

    Solves sum_i (I - d_i d_i^T) x = sum_i (I - d_i d_i^T) a_i. Returns
    (point, rms) where rms is the root-mean-square perpendicular distance
    of the point to the lines. Needs >= 2 lines with distinct directions.
    """
    a = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] != d.shape[0] or a.shape[0] < 2:
        raise ValidationError("need at least 2 lines", field="lines")
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    big_a = np.zeros((3, 3))
    big_b = np.zeros(3)
    for ai, di in zip(a, d):
        proj = np.eye(3) - np.outer(di, di)
        big_a += proj
        big_b += proj @ ai
    eig = np.linalg.eigvalsh(big_a)
    if eig[0] < 1e-10 * max(eig[-1], 1e-30):
        raise DegenerateGeometryError("lines are parallel; intersection point undetermined")
    x = np.linalg.solve(big_a, big_b)
    off = x - a
    perp = off - (np.sum(off * d, axis=1, keepdims=True)) * d
    rms = float(np.sqrt(np.mean(np.sum(perp * perp, axis=1))))
    return x, rms


@dataclass(frozen=True)
class BallObservation:
    """One calibration press: ball circle plus per-light shadow vertices.

    vertices aligns with the rig's lights; None marks a light whose
    vertex was not visible in this image.
    """

    center_mm: tuple
    radius_mm: float
    vertices_mm: tuple


@dataclass
class LightCalibrationEntry:
    index: int
    kind: str
    n_rays: int
    residual: float
    units: str


@dataclass
class LightCalibrationReport:
    entries: list

    def to_text(self):
        lines = ["light calibration report"]
        for e in self.entries:
            lines.append(f"  light {e.index} ({e.kind}): {e.n_rays} rays, "
                         f"residual {e.residual:.6f} {e.units}")
        return "\n".join(lines) + "\n"


def calibrate_lights(observations, template_rig):
    """Recover light geometry from ball-press shadow vertices.

    Point lights need vertices in at least 2 images (tangent rays are
    intersected); directional lights need at least 1 (the mean tangent
    direction, reversed, is the travel direction). Photometric fields
    come through from the template. Returns (rig, report); the report
    carries per-light residuals (mm for point, degrees for directional).
    """
    new_lights = []
    entries = []
    for i, light in enumerate(template_rig.lights):
        anchors, dirs = [], []
        for obs in observations:
            v = obs.vertices_mm[i] if i < len(obs.vertices_mm) else None
            if v is None:
                continue
            anchor, direction = tangent_ray(obs.center_mm, obs.radius_mm, v)
            anchors.append(anchor)
            dirs.append(direction)
        if light.kind == "point":
            if len(anchors) < 2:
                raise ValidationError(
                    f"point light {i} needs vertices in >= 2 images, got {len(anchors)}",
                    field=f"light[{i}]")
            pos, rms = nearest_point_of_lines(anchors, dirs)
            new_lights.append(replace(light, position_mm=tuple(pos)))
            entries.append(LightCalibrationEntry(i, "point", len(anchors), rms, "mm"))
        else:
            if len(dirs) < 1:
                raise ValidationError(
                    f"directional light {i} needs a vertex in >= 1 image",
                    field=f"light[{i}]")
            mean = np.mean(dirs, axis=0)
            mean /= np.linalg.norm(mean)
            ang = [np.degrees(np.arccos(np.clip(d @ mean, -1.0, 1.0))) for d in dirs]
            new_lights.append(replace(light, direction=tuple(-mean)))
            entries.append(LightCalibrationEntry(i, "directional", len(dirs),
                                                 float(np.mean(ang)), "deg"))
    rig = LightRig(tuple(new_lights), template_rig.plane)
    return rig, LightCalibrationReport(entries)


def find_shadow_vertex(mask, ball_center_mm, toward_deg, pitch_mm,
                       cone_half_angle_deg=50.0, min_value=0.5):
    """Locate a ball-shadow vertex in a rasterized mask.

    Searches pixels with mask value above `min_value` whose direction
    from the ball center lies within a cone around azimuth `toward_deg`
    (the direction the shadow extends, i.e. away from the light) and
    returns the farthest as (x, y) in mm. Returns None when nothing
    qualifies or the farthest pixel touches the raster border (the
    shadow is clipped and the vertex unreliable).
    """
    mask = np.asarray(mask)
    rows, cols = np.nonzero(mask > min_value)
    if rows.size == 0:
        return None
    x = (cols + 0.5) * pitch_mm - ball_center_mm[0]
    y = (rows + 0.5) * pitch_mm - ball_center_mm[1]
    ang = np.degrees(np.arctan2(y, x))
    diff = (ang - toward_deg + 180.0) % 360.0 - 180.0
    sel = np.abs(diff) <= cone_half_angle_deg
    if not sel.any():
        return None
    d2 = x * x + y * y
    d2[~sel] = -1.0
    k = int(np.argmax(d2))
    if rows[k] in (0, mask.shape[0] - 1) or cols[k] in (0, mask.shape[1] - 1):
        return None
    return ((cols[k] + 0.5) * pitch_mm, (rows[k] + 0.5) * pitch_mm)
