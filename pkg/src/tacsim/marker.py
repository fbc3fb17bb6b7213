"""Marker motion under normal, shear and twist loads.

Markers printed on the gel drag with the surface. Each load contributes
a Gaussian-attenuated displacement: pressing spreads markers away from
the contact pixels, shear drags them along the (capped) tangential
displacement, twist rotates them about the load anchor. The three terms
superpose; coefficients lambda_* set the spatial falloff in 1/mm^2 and
come from calibration.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import FitConvergenceError, ValidationError

LOAD_KINDS = ("dilate", "shear", "twist")

DEFAULT_STRIDE = 4  # contact-pixel subsampling for the dilate sum


@dataclass(frozen=True)
class MotionCoefficients:
    """Falloff coefficients (1/mm^2) and friction caps for marker motion."""

    lambda_d: float = 1.25e-3
    lambda_s: float = 2.10e-4
    lambda_t: float = 3.80e-4
    shear_cap_mm: float = 1.0
    twist_cap_deg: float = 15.0

    def __post_init__(self):
        for name in ("lambda_d", "lambda_s", "lambda_t"):
            if not (getattr(self, name) > 0):
                raise ValidationError("must be positive", field=f"motion.{name}")
        if not (self.shear_cap_mm > 0):
            raise ValidationError("must be positive", field="motion.shear_cap_mm")
        if not (0 < self.twist_cap_deg <= 180):
            raise ValidationError("must lie in (0, 180]", field="motion.twist_cap_deg")


@dataclass
class MarkerField:
    """Marker layout on the gel plus rendering attributes."""

    positions_mm: np.ndarray  # (K, 2)
    area_mm: tuple  # active area (width_mm, height_mm)
    radius_px: float = 2.0
    darkness: float = 0.85

    def __post_init__(self):
        self.positions_mm = np.asarray(self.positions_mm, dtype=np.float64).reshape(-1, 2)
        w, h = self.area_mm
        if not (w > 0 and h > 0):
            raise ValidationError("active area must be positive", field="markers.area_mm")
        if ((self.positions_mm[:, 0] < 0) | (self.positions_mm[:, 0] > w)
                | (self.positions_mm[:, 1] < 0) | (self.positions_mm[:, 1] > h)).any():
            raise ValidationError("marker positions must lie inside the active area",
                                  field="markers.positions_mm")
        if len(np.unique(self.positions_mm, axis=0)) != len(self.positions_mm):
            raise ValidationError("marker positions must be distinct",
                                  field="markers.positions_mm")
        if not (self.radius_px > 0):
            raise ValidationError("must be positive", field="markers.radius_px")
        if not (0 < self.darkness <= 1):
            raise ValidationError("must lie in (0, 1]", field="markers.darkness")

    @property
    def count(self):
        return self.positions_mm.shape[0]

    @classmethod
    def grid(cls, rows=9, cols=7, spacing_mm=1.8, area_mm=(14.4, 19.2),
             origin_mm=None, radius_px=2.0, darkness=0.85):
        """Regular marker grid, centered in the active area by default."""
        if rows < 1 or cols < 1:
            raise ValidationError("grid needs at least one row and column",
                                  field="markers.layout")
        if not (spacing_mm > 0):
            raise ValidationError("must be positive", field="markers.spacing_mm")
        if origin_mm is None:
            origin_mm = ((area_mm[0] - (cols - 1) * spacing_mm) / 2.0,
                         (area_mm[1] - (rows - 1) * spacing_mm) / 2.0)
        xs = origin_mm[0] + spacing_mm * np.arange(cols)
        ys = origin_mm[1] + spacing_mm * np.arange(rows)
        gx, gy = np.meshgrid(xs, ys)
        pos = np.column_stack((gx.ravel(), gy.ravel()))
        return cls(pos, area_mm, radius_px, darkness)


def _contact_points(contact, stride):
    """Contact positions/heights, subsampled on a stride grid when rasterized.

    Subsampling keeps pixels on a stride x stride lattice and scales the
    heights by stride^2 so the dilate sum approximates the full one. A
    contact set built from explicit points (no raster indices) is used
    as-is: it already is the whole set.
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1", field="stride")
    pts = contact.points_mm
    h = contact.heights_mm
    if stride == 1 or contact.pixel_rows is None or contact.pixel_cols is None:
        return pts, h
    sel = (contact.pixel_rows % stride == 0) & (contact.pixel_cols % stride == 0)
    return pts[sel], h[sel] * float(stride * stride)


def dilate_displacement(markers, contact, coeffs, stride=1):
    """Spread displacement from pressing: sum over contact pixels C_i of
    dh_i * (M - C_i) * exp(-lambda_d * ||M - C_i||^2)."""
    markers = np.asarray(markers, dtype=np.float64).reshape(-1, 2)
    pts, h = _contact_points(contact, stride)
    out = np.zeros_like(markers)
    if pts.shape[0] == 0:
        return out
    lam = coeffs.lambda_d
    # chunk the marker axis so the (K, N, 2) broadcast stays in cache-friendly pieces
    chunk = max(1, int(4_000_000 // max(pts.shape[0], 1)))
    for start in range(0, markers.shape[0], chunk):
        m = markers[start:start + chunk]
        diff = m[:, None, :] - pts[None, :, :]
        d2 = np.einsum("knj,knj->kn", diff, diff)
        w = h[None, :] * np.exp(-lam * d2)
        out[start:start + chunk] = np.einsum("kn,knj->kj", w, diff)
    return out


def shear_displacement(markers, contact, coeffs):
    """Capped tangential drag: min(|ds|, cap) * exp(-lambda_s * ||M - G||^2)."""
    markers = np.asarray(markers, dtype=np.float64).reshape(-1, 2)
    g = contact.anchor()
    if g is None:
        raise ValidationError("contact has no anchor (no center and no pixels)",
                              field="contact")
    vec = np.asarray(contact.shear_mm, dtype=np.float64)
    mag = float(np.linalg.norm(vec))
    if mag > coeffs.shear_cap_mm:
        vec = vec * (coeffs.shear_cap_mm / mag)
    rel = markers - g
    w = np.exp(-coeffs.lambda_s * np.sum(rel * rel, axis=1))
    return w[:, None] * vec[None, :]


def twist_displacement(markers, contact, coeffs):
    """Capped rotation about the anchor via the rotation-difference matrix
    [[cos t - 1, -sin t], [sin t, cos t - 1]] attenuated by exp(-lambda_t r^2)."""
    markers = np.asarray(markers, dtype=np.float64).reshape(-1, 2)
    g = contact.anchor()
    if g is None:
        raise ValidationError("contact has no anchor (no center and no pixels)",
                              field="contact")
    t = np.deg2rad(np.clip(contact.twist_deg, -coeffs.twist_cap_deg, coeffs.twist_cap_deg))
    c, s = np.cos(t), np.sin(t)
    rel = markers - g
    w = np.exp(-coeffs.lambda_t * np.sum(rel * rel, axis=1))
    rot = np.column_stack(((c - 1.0) * rel[:, 0] - s * rel[:, 1],
                           s * rel[:, 0] + (c - 1.0) * rel[:, 1]))
    return w[:, None] * rot


@dataclass(frozen=True)
class MarkerLayoutSpec:
    """Declarative marker layout as stored in sensor configs.

    layout is "grid" (rows x cols at spacing_mm, centered when origin_mm
    is None) or "explicit" (positions_mm used verbatim).
    """

    layout: str = "grid"
    rows: int = 9
    cols: int = 7
    spacing_mm: float = 1.8
    origin_mm: tuple | None = None
    positions_mm: tuple = ()
    radius_px: float = 2.0
    darkness: float = 0.85

    def __post_init__(self):
        if self.layout not in ("grid", "explicit"):
            raise ValidationError(f"unknown layout {self.layout!r}", field="markers.layout")
        if self.layout == "explicit" and not self.positions_mm:
            raise ValidationError("explicit layout needs positions_mm",
                                  field="markers.positions_mm")

    def build(self, area_mm):
        """Materialize the MarkerField for a given active area."""
        if self.layout == "grid":
            return MarkerField.grid(self.rows, self.cols, self.spacing_mm,
                                    area_mm=area_mm, origin_mm=self.origin_mm,
                                    radius_px=self.radius_px, darkness=self.darkness)
        pos = np.asarray(self.positions_mm, dtype=np.float64).reshape(-1, 2)
        return MarkerField(pos, area_mm, self.radius_px, self.darkness)


@dataclass
class MotionResult:
    """Composed marker motion: final positions, raw displacement, clamp flags."""

    positions_mm: np.ndarray
    displacement_mm: np.ndarray
    clamped: np.ndarray


def compose_motion(markers, contact, coeffs, stride=DEFAULT_STRIDE):
    """Superpose dilate, shear and twist on a MarkerField.

    Markers pushed outside the active area are clamped to the boundary
    and flagged. displacement_mm is the raw (unclamped) sum of the three
    terms, so positions = clip(M_ini + displacement).
    """
    m = markers.positions_mm
    disp = (dilate_displacement(m, contact, coeffs, stride=stride)
            + shear_displacement(m, contact, coeffs)
            + twist_displacement(m, contact, coeffs))
    pos = m + disp
    w, h = markers.area_mm
    clipped = np.column_stack((np.clip(pos[:, 0], 0.0, w), np.clip(pos[:, 1], 0.0, h)))
    clamped = np.any(clipped != pos, axis=1)
    return MotionResult(clipped, disp, clamped)


def render_markers(image, positions_mm, pitch_mm, radius_px=2.0, darkness=0.85):
    """Stamp anti-aliased dark discs onto an image.

    Disc coverage is accumulated with a max, so coincident markers darken
    the same as a single one (min-intensity compositing).
    """
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("image must be 8-bit RGB", field="image")
    if not (radius_px > 0) or not (0 < darkness <= 1):
        raise ValidationError("bad disc radius or darkness", field="markers")
    hgt, wid = img.shape[:2]
    cover = np.zeros((hgt, wid), np.float32)
    positions = np.asarray(positions_mm, dtype=np.float64).reshape(-1, 2)
    pad = int(np.ceil(radius_px)) + 1
    for x, y in positions:
        fx, fy = x / pitch_mm, y / pitch_mm  # pixel units, centers at i + 0.5
        ci, cj = int(np.floor(fx)), int(np.floor(fy))
        i0, i1 = max(ci - pad, 0), min(ci + pad + 1, wid)
        j0, j1 = max(cj - pad, 0), min(cj + pad + 1, hgt)
        if i0 >= i1 or j0 >= j1:
            continue
        ii = np.arange(i0, i1) + 0.5 - fx
        jj = np.arange(j0, j1) + 0.5 - fy
        dist = np.sqrt(ii[None, :] ** 2 + jj[:, None] ** 2)
        patch = np.clip(radius_px + 0.5 - dist, 0.0, 1.0).astype(np.float32)
        np.maximum(cover[j0:j1, i0:i1], patch, out=cover[j0:j1, i0:i1])
    alpha = (darkness * cover)[:, :, None]
    out = np.rint(img.astype(np.float32) * (1.0 - alpha))
    return np.clip(out, 0, 255).astype(np.uint8)


def flow_image(m_ini, m_cur, geom, scale=1.0, background_level=230):
    """Draw the marker displacement field as dots plus scaled arrows.

    Markers that did not move get a dot only. Returns an 8-bit RGB image
    on a neutral background.
    """
    img = np.full((geom.height, geom.width, 3), background_level, np.uint8)
    m_ini = np.asarray(m_ini, dtype=np.float64).reshape(-1, 2)
    m_cur = np.asarray(m_cur, dtype=np.float64).reshape(-1, 2)
    if m_ini.shape != m_cur.shape:
        raise ValidationError("marker arrays disagree in shape", field="markers")
    pitch = geom.pitch_mm
    for (x0, y0), (x1, y1) in zip(m_ini, m_cur):
        p0 = (int(round(x0 / pitch)), int(round(y0 / pitch)))
        cv2.circle(img, p0, 2, (40, 40, 40), -1, lineType=cv2.LINE_AA)
        dx, dy = (x1 - x0) * scale, (y1 - y0) * scale
        if dx * dx + dy * dy < 1e-24:
            continue
        p1 = (int(round((x0 + dx) / pitch)), int(round((y0 + dy) / pitch)))
        cv2.arrowedLine(img, p0, p1, (180, 30, 30), 1, line_type=cv2.LINE_AA,
                        tipLength=0.3)
    return img


@dataclass(frozen=True)
class MotionObservation:
    """One calibration record: a load and the displacement it produced."""

    kind: str
    contact: object  # ContactState
    markers_mm: np.ndarray  # (K, 2) initial positions
    displacement_mm: np.ndarray  # (K, 2) observed displacement

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ValidationError(f"unknown load kind {self.kind!r}", field="observation.kind")


@dataclass
class LambdaFitReport:
    rms_mm: dict
    iterations: dict
    traces: dict

    def to_text(self):
        lines = ["marker coefficient fit"]
        for kind in LOAD_KINDS:
            lines.append(f"  {kind}: rms {self.rms_mm[kind]:.3e} mm in "
                         f"{self.iterations[kind]} iterations")
        return "\n".join(lines) + "\n"


def _predict(kind, lam, obs, caps, stride):
    """Displacement prediction and its derivative wrt lambda for one record."""
    coeffs = MotionCoefficients(
        lambda_d=lam if kind == "dilate" else 1.0,
        lambda_s=lam if kind == "shear" else 1.0,
        lambda_t=lam if kind == "twist" else 1.0,
        shear_cap_mm=caps.shear_cap_mm, twist_cap_deg=caps.twist_cap_deg)
    m = np.asarray(obs.markers_mm, dtype=np.float64).reshape(-1, 2)
    if kind == "dilate":
        pts, h = _contact_points(obs.contact, stride)
        diff = m[:, None, :] - pts[None, :, :]
        d2 = np.einsum("knj,knj->kn", diff, diff)
        w = h[None, :] * np.exp(-lam * d2)
        pred = np.einsum("kn,knj->kj", w, diff)
        dpred = np.einsum("kn,knj->kj", -d2 * w, diff)
        return pred, dpred
    if kind == "shear":
        pred = shear_displacement(m, obs.contact, coeffs)
        g = obs.contact.anchor()
        rel = m - g
        d2 = np.sum(rel * rel, axis=1)
        return pred, -d2[:, None] * pred
    pred = twist_displacement(m, obs.contact, coeffs)
    g = obs.contact.anchor()
    rel = m - g
    d2 = np.sum(rel * rel, axis=1)
    return pred, -d2[:, None] * pred


def fit_lambdas(observations, init=MotionCoefficients(), stride=1,
                max_iterations=100, min_per_kind=5):
    """Fit lambda_d, lambda_s, lambda_t separately by damped Gauss-Newton.

    Each load type needs at least `min_per_kind` observations. The fit
    runs on log(lambda) to stay positive; caps are taken from `init`
    and not fitted. Returns (MotionCoefficients, LambdaFitReport). A fit
    that cannot reduce the residual raises FitConvergenceError carrying
    the best iterate and the loss trace.
    """
    grouped = {kind: [o for o in observations if o.kind == kind] for kind in LOAD_KINDS}
    for kind, group in grouped.items():
        if len(group) < min_per_kind:
            raise ValidationError(
                f"need >= {min_per_kind} {kind} observations, got {len(group)}",
                field="observations")
    start = {"dilate": init.lambda_d, "shear": init.lambda_s, "twist": init.lambda_t}
    fitted, rms, iters, traces = {}, {}, {}, {}
    for kind, group in grouped.items():
        lam, info = _fit_one(kind, group, start[kind], init, stride, max_iterations)
        fitted[kind] = lam
        rms[kind] = info["rms"]
        iters[kind] = info["iterations"]
        traces[kind] = info["trace"]
    coeffs = MotionCoefficients(
        lambda_d=fitted["dilate"], lambda_s=fitted["shear"], lambda_t=fitted["twist"],
        shear_cap_mm=init.shear_cap_mm, twist_cap_deg=init.twist_cap_deg)
    return coeffs, LambdaFitReport(rms, iters, traces)


def _fit_one(kind, group, lam0, caps, stride, max_iterations):
    observed = [np.asarray(o.displacement_mm, dtype=np.float64).reshape(-1, 2)
                for o in group]

    def residual_and_jac(phi):
        lam = float(np.exp(phi))
        r_parts, j_parts = [], []
        for o, y in zip(group, observed):
            pred, dpred = _predict(kind, lam, o, caps, stride)
            r_parts.append((pred - y).ravel())
            j_parts.append((dpred * lam).ravel())  # chain rule through phi = log lam
        return np.concatenate(r_parts), np.concatenate(j_parts)

    phi = float(np.log(lam0))
    r, j = residual_and_jac(phi)
    loss = float(r @ r)
    trace = [loss]
    mu = 1e-3
    it = 0
    signal = max(float(np.max(np.abs(np.concatenate(observed)))), float(np.max(np.abs(r))))
    if signal < 1e-14:
        raise FitConvergenceError(
            f"degenerate {kind} fit: observations and predictions are all zero",
            best=np.exp(phi), trace=trace)
    for it in range(1, max_iterations + 1):
        h = float(j @ j)
        g = float(j @ r)
        if h < 1e-300:
            raise FitConvergenceError(
                f"degenerate {kind} fit: residual is insensitive to lambda",
                best=np.exp(phi), trace=trace)
        accepted = False
        while mu < 1e12:
            step = -g / (h * (1.0 + mu))
            # cap the log-space step: an uncapped Newton step from a far-off
            # init can overshoot into the regime where every exp(-lambda*d^2)
            # underflows, zeroing the prediction *and* the jacobian -- the
            # lower loss there gets accepted and the fit is stranded
            step = float(np.clip(step, -3.0, 3.0))
            r_try, j_try = residual_and_jac(phi + step)
            loss_try = float(r_try @ r_try)
            if loss_try < loss:
                phi += step
                r, j, loss = r_try, j_try, loss_try
                trace.append(loss)
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            # no strict reduction left: converged if the Newton step or the
            # attainable decrease (~ g^2/h) is negligible, a genuine stall
            # otherwise
            if (abs(g) <= 1e-10 * h * max(1.0, abs(phi))
                    or g * g <= 1e-12 * h * loss):
                break
            raise FitConvergenceError(
                f"{kind} fit stalled after {it} iterations", best=np.exp(phi), trace=trace)
        if abs(step) < 1e-12 or (len(trace) > 1 and trace[-2] - trace[-1]
                                 < 1e-14 * max(trace[-2], 1e-300)):
            break
    else:
        # exhausting the budget without meeting a convergence test means
        # the loss kept falling forever -- lambda is marching to infinity
        # (e.g. zero observed motion under a nonzero load)
        raise FitConvergenceError(
            f"{kind} fit did not converge in {max_iterations} iterations",
            best=np.exp(phi), trace=trace)
    n_resid = r.size
    return float(np.exp(phi)), {"rms": float(np.sqrt(loss / n_resid)),
                                "iterations": it, "trace": trace}


def write_displacement_table(path, m_ini, displacement):
    """Write a marker displacement field as a plain text table."""
    m_ini = np.asarray(m_ini, dtype=np.float64).reshape(-1, 2)
    disp = np.asarray(displacement, dtype=np.float64).reshape(-1, 2)
    if m_ini.shape != disp.shape:
        raise ValidationError("marker arrays disagree in shape", field="markers")
    lines = ["# marker displacement field",
             "# columns: index x_mm y_mm dx_mm dy_mm"]
    for k, ((x, y), (dx, dy)) in enumerate(zip(m_ini, disp)):
        lines.append(f"{k} {float(x)!r} {float(y)!r} {float(dx)!r} {float(dy)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_displacement_table(path):
    """Read a displacement table back as (positions (K,2), displacement (K,2))."""
    pos, disp = [], []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValidationError(f"line {ln}: expected 5 columns, got {len(parts)}",
                                      field="displacement_table")
            try:
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise ValidationError(f"line {ln}: non-numeric value",
                                      field="displacement_table") from None
            pos.append(vals[:2])
            disp.append(vals[2:])
    return (np.asarray(pos, dtype=np.float64).reshape(-1, 2),
            np.asarray(disp, dtype=np.float64).reshape(-1, 2))
