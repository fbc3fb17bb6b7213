"""Contact scene generation: indenter shapes, poses and height maps.

Everything lives in gel-plane coordinates: x runs along image columns,
y along rows, both in mm, with pixel (row j, col i) centered at
((i + 0.5) * pitch, (j + 0.5) * pitch). Heights are penetration depths
into the gel in mm, zero where there is no contact.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ValidationError

SHAPE_KINDS = ("sphere", "cylinder", "cuboid", "prism", "cone")

# dimension names each shape kind requires, all in mm
_REQUIRED_DIMS = {
    "sphere": ("radius",),
    "cylinder": ("radius",),
    "cuboid": ("width", "length"),
    "prism": ("side",),
    "cone": ("radius", "height"),
}


@dataclass(frozen=True)
class SensorGeometry:
    """Raster geometry of the gel: image size in pixels plus mm-per-pixel."""

    width: int = 240
    height: int = 320
    pitch_mm: float = 0.06

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValidationError("raster must be at least 3x3 pixels", field="sensor.size")
        if not (self.pitch_mm > 0):
            raise ValidationError("pixel pitch must be positive", field="sensor.pixel_pitch_mm")

    @property
    def area_mm(self):
        """Active area (width_mm, height_mm)."""
        return (self.width * self.pitch_mm, self.height * self.pitch_mm)

    def pixel_centers(self):
        """Column and row center coordinates in mm: (xs[W], ys[H])."""
        xs = (np.arange(self.width) + 0.5) * self.pitch_mm
        ys = (np.arange(self.height) + 0.5) * self.pitch_mm
        return xs, ys


@dataclass(frozen=True)
class IndenterShape:
    """Rigid indenter pressed face- or tip-first into the gel.

    kind is one of SHAPE_KINDS; dims holds the shape-specific lengths:
    sphere/cylinder: radius; cuboid: width, length; prism: side
    (equilateral cross-section, pressed on its flat end); cone: radius,
    height (apex down).
    """

    kind: str
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValidationError(f"unknown shape kind {self.kind!r}", field="shape.kind")
        for name in _REQUIRED_DIMS[self.kind]:
            v = self.dims.get(name)
            if v is None or not (v > 0):
                raise ValidationError(
                    f"{self.kind} needs positive {name}", field=f"shape.{name}")

    @classmethod
    def sphere(cls, radius):
        return cls("sphere", {"radius": float(radius)})

    @classmethod
    def cylinder(cls, radius):
        return cls("cylinder", {"radius": float(radius)})

    @classmethod
    def cuboid(cls, width, length):
        return cls("cuboid", {"width": float(width), "length": float(length)})

    @classmethod
    def prism(cls, side):
        return cls("prism", {"side": float(side)})

    @classmethod
    def cone(cls, radius, height):
        return cls("cone", {"radius": float(radius), "height": float(height)})

    def profile(self, rx, ry):
        """Height of the indenter's lower surface above its lowest point.

        rx, ry are body-frame offsets from the shape axis in mm (arrays).
        Returns +inf outside the silhouette, so penetration at press depth
        d is simply max(0, d - profile).
        """
        rx = np.asarray(rx, dtype=np.float64)
        ry = np.asarray(ry, dtype=np.float64)
        inf = np.inf
        if self.kind == "sphere":
            r = self.dims["radius"]
            rho2 = rx * rx + ry * ry
            inside = rho2 <= r * r
            z = np.where(inside, r - np.sqrt(np.maximum(r * r - rho2, 0.0)), inf)
            return z
        if self.kind == "cylinder":
            r = self.dims["radius"]
            return np.where(rx * rx + ry * ry <= r * r, 0.0, inf)
        if self.kind == "cuboid":
            w, l = self.dims["width"], self.dims["length"]
            inside = (np.abs(rx) <= w / 2) & (np.abs(ry) <= l / 2)
            return np.where(inside, 0.0, inf)
        if self.kind == "prism":
            # equilateral triangle, one vertex toward +y, centroid on the axis
            a = self.dims["side"]
            rc = a / np.sqrt(3.0)  # circumradius
            inside = np.ones(np.broadcast(rx, ry).shape, dtype=bool)
            for ang in (-np.pi / 2, np.pi / 6, np.pi * 5 / 6):
                # outward edge normals; vertices sit opposite at 90/210/330 deg
                nx, ny = np.cos(ang), np.sin(ang)
                inside &= (rx * nx + ry * ny) <= rc / 2 + 1e-12
            return np.where(inside, 0.0, inf)
        # cone, apex down
        r, h = self.dims["radius"], self.dims["height"]
        rho = np.sqrt(rx * rx + ry * ry)
        return np.where(rho <= r, rho * (h / r), inf)


@dataclass(frozen=True)
class ContactPose:
    """Where and how hard the indenter is pressed, plus tangential load.

    center: (x, y) mm on the gel; depth: press depth in mm; shear:
    tangential displacement (dx, dy) mm; twist_deg: rotation about the
    contact normal in degrees. Shear and twist drive marker motion and,
    for non-round shapes, twist also orients the footprint.
    """

    center: tuple
    depth: float
    shear: tuple = (0.0, 0.0)
    twist_deg: float = 0.0

    def __post_init__(self):
        if len(self.center) != 2:
            raise ValidationError("center must be (x, y)", field="pose.center")
        if not (self.depth >= 0):
            raise ValidationError("depth must be >= 0", field="pose.depth")
        if len(self.shear) != 2:
            raise ValidationError("shear must be (dx, dy)", field="pose.shear")
        if not (abs(self.twist_deg) <= 180.0):
            raise ValidationError("twist must lie in [-180, 180] deg", field="pose.twist_deg")


@dataclass
class HeightMap:
    """Dense penetration map in mm over the sensor raster."""

    data: np.ndarray  # float32, shape (height, width)
    pitch_mm: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValidationError("height map must be 2-D", field="heightmap.data")
        if not (self.pitch_mm > 0):
            raise ValidationError("pitch must be positive", field="heightmap.pitch_mm")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def validate(self):
        """Raise if heights are non-finite or negative."""
        if not np.isfinite(self.data).all():
            raise ValidationError("height map contains non-finite values", field="heightmap.data")
        if (self.data < 0).any():
            raise ValidationError("height map contains negative values", field="heightmap.data")
        return self

    def geometry(self):
        return SensorGeometry(self.width, self.height, self.pitch_mm)


@dataclass
class ContactState:
    """Contact pixels plus the load that produced them.

    points_mm: (N, 2) pixel-center coordinates of contact pixels;
    heights_mm: (N,) penetration at those pixels; center: load anchor
    (None means "use the contact centroid"); pixel_rows/pixel_cols keep
    the raster indices so marker code can subsample on a stride grid.
    """

    points_mm: np.ndarray
    heights_mm: np.ndarray
    center: tuple | None = None
    shear_mm: tuple = (0.0, 0.0)
    twist_deg: float = 0.0
    pixel_rows: np.ndarray | None = None
    pixel_cols: np.ndarray | None = None

    def __post_init__(self):
        self.points_mm = np.asarray(self.points_mm, dtype=np.float64).reshape(-1, 2)
        self.heights_mm = np.asarray(self.heights_mm, dtype=np.float64).reshape(-1)
        if self.points_mm.shape[0] != self.heights_mm.shape[0]:
            raise ValidationError("points and heights disagree in length", field="contact")

    @property
    def count(self):
        return self.points_mm.shape[0]

    def anchor(self):
        """Load anchor: explicit center, else contact centroid, else None."""
        if self.center is not None:
            return np.asarray(self.center, dtype=np.float64)
        if self.count:
            return self.points_mm.mean(axis=0)
        return None


def render_height_map(shape, pose, geom=None):
    """Press `shape` into the gel at `pose` and return the HeightMap.

    Penetration per pixel is max(0, depth - profile) where profile is the
    indenter's lower-surface height above its lowest point. The pose
    center must lie inside the active area.
    """
    if geom is None:
        geom = SensorGeometry()
    w_mm, h_mm = geom.area_mm
    cx, cy = float(pose.center[0]), float(pose.center[1])
    if not (0.0 <= cx <= w_mm and 0.0 <= cy <= h_mm):
        raise BoundsError(
            f"pose center ({cx}, {cy}) mm outside active area {w_mm} x {h_mm} mm",
            field="pose.center")
    xs, ys = geom.pixel_centers()
    rx = xs[None, :] - cx
    ry = ys[:, None] - cy
    if pose.twist_deg and shape.kind in ("cuboid", "prism"):
        # rotate offsets into the body frame
        t = np.deg2rad(pose.twist_deg)
        c, s = np.cos(t), np.sin(t)
        rx, ry = c * rx + s * ry, -s * rx + c * ry
    prof = shape.profile(rx, ry)
    pen = np.maximum(0.0, pose.depth - prof)
    return HeightMap(pen.astype(np.float32), geom.pitch_mm)


def contact_state(hm, pose=None, threshold_mm=0.05):
    """Extract contact pixels above `threshold_mm` from a height map.

    The returned state carries the pose's center/shear/twist when a pose
    is given; otherwise the anchor falls back to the contact centroid.
    """
    if not (threshold_mm > 0):
        raise ValidationError("contact threshold must be positive", field="contact_threshold_mm")
    hm.validate()
    rows, cols = np.nonzero(hm.data > threshold_mm)
    pts = np.column_stack(((cols + 0.5) * hm.pitch_mm, (rows + 0.5) * hm.pitch_mm))
    heights = hm.data[rows, cols].astype(np.float64)
    center = tuple(pose.center) if pose is not None else None
    shear = tuple(pose.shear) if pose is not None else (0.0, 0.0)
    twist = float(pose.twist_deg) if pose is not None else 0.0
    return ContactState(pts, heights, center=center, shear_mm=shear, twist_deg=twist,
                        pixel_rows=rows, pixel_cols=cols)
