"""File formats: sensor config, height-map rasters, PNGs, model binaries.

The sensor config is a sectioned key = value text file with a schema
version; save(load(path)) reproduces a canonical file byte for byte.
Height maps travel either as a raw float32 raster with a 16-line ASCII
header or as 16-bit grayscale PNG with an mm-per-level scale. All
lengths are mm and angles degrees inside files; conversion happens at
this boundary only.
"""

import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import ConfigParseError, ModelFormatError, RasterFormatError, ValidationError
from .marker import MarkerLayoutSpec, MotionCoefficients
from .mlp import FEATURE_NAMES, OUTPUT_NAMES, ReflectanceModel
from .optics import DEFAULT_KERNELS
from .scene import SensorGeometry
from .shadow import LightRig, LightSource, ShadowPlane

SCHEMA_VERSION = 1
RASTER_MAGIC = "tacraster"
RASTER_HEADER_LINES = 16
MODEL_MAGIC = b"tacrefl\n"
MODEL_VERSION = 1
PNG_SCALE_KEY = "height_scale_mm_per_level"
PNG_PITCH_KEY = "pixel_pitch_mm"

GEL_KINDS = ("flat", "curved_subtracted")

_DIGIT_LIGHTS = (
    LightSource("point", position_mm=(7.2, 21.6, 7.0), tint=(0.85, 0.1, 0.1),
                strength=0.45),
    LightSource("point", position_mm=(-3.2, 3.6, 7.0), tint=(0.1, 0.85, 0.1),
                strength=0.45),
    LightSource("point", position_mm=(17.6, 3.6, 7.0), tint=(0.1, 0.1, 0.85),
                strength=0.45),
)


@dataclass
class SensorConfig:
    """Everything the simulator needs to know about one sensor."""

    name: str = "digit"
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    gel: str = "flat"
    contact_threshold_mm: float = 0.05
    kernels: tuple = DEFAULT_KERNELS
    rig: LightRig = field(default_factory=lambda: LightRig(_DIGIT_LIGHTS))
    marker_layout: MarkerLayoutSpec = field(default_factory=MarkerLayoutSpec)
    motion: MotionCoefficients = field(default_factory=MotionCoefficients)
    reflectance_model: str | None = None
    background_image: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if self.gel not in GEL_KINDS:
            raise ValidationError(f"gel must be one of {GEL_KINDS}", field="sensor.gel")
        if not (self.contact_threshold_mm > 0):
            raise ValidationError("must be positive", field="sensor.contact_threshold_mm")

    def marker_field(self):
        return self.marker_layout.build(self.geometry.area_mm)

    def resolve(self, rel):
        if rel is None:
            return None
        return os.path.normpath(os.path.join(self.base_dir, rel))

    @property
    def model_path(self):
        return self.resolve(self.reflectance_model)

    @property
    def background_path(self):
        return self.resolve(self.background_image)


# ---------------------------------------------------------------- text config

_SECTION_KEYS = {
    "sensor": ("name", "width", "height", "pixel_pitch_mm", "gel",
               "contact_threshold_mm"),
    "smoothing": ("kernels",),
    "shadow": ("plane_normal", "plane_offset_mm"),
    "light": ("kind", "position_mm", "direction", "tint", "strength"),
    "markers": ("layout", "rows", "cols", "spacing_mm", "origin_mm",
                "positions_mm", "radius_px", "darkness"),
    "motion": ("lambda_d", "lambda_s", "lambda_t", "shear_cap_mm", "twist_cap_deg"),
    "paths": ("reflectance_model", "background_image"),
}


def _fmt(v):
    if isinstance(v, bool):
        raise TypeError("no boolean config values")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _fmt_vec(vec):
    return " ".join(repr(float(x)) for x in vec)


def save_config(cfg, path):
    """Write the canonical text form of a sensor config."""
    out = io.StringIO()
    w = out.write
    w("# tacsim sensor configuration\n")
    w(f"schema_version = {SCHEMA_VERSION}\n")
    w("\n[sensor]\n")
    w(f"name = {cfg.name}\n")
    w(f"width = {cfg.geometry.width}\n")
    w(f"height = {cfg.geometry.height}\n")
    w(f"pixel_pitch_mm = {_fmt(cfg.geometry.pitch_mm)}\n")
    w(f"gel = {cfg.gel}\n")
    w(f"contact_threshold_mm = {_fmt(cfg.contact_threshold_mm)}\n")
    w("\n[smoothing]\n")
    w("kernels = " + " ".join(f"{int(s)}:{repr(float(g))}" for s, g in cfg.kernels) + "\n")
    w("\n[shadow]\n")
    w(f"plane_normal = {_fmt_vec(cfg.rig.plane.normal)}\n")
    w(f"plane_offset_mm = {_fmt(cfg.rig.plane.offset_mm)}\n")
    for light in cfg.rig.lights:
        w("\n[light]\n")
        w(f"kind = {light.kind}\n")
        w(f"position_mm = {_fmt_vec(light.position_mm)}\n")
        w(f"direction = {_fmt_vec(light.direction)}\n")
        w(f"tint = {_fmt_vec(light.tint)}\n")
        w(f"strength = {_fmt(light.strength)}\n")
    ml = cfg.marker_layout
    w("\n[markers]\n")
    w(f"layout = {ml.layout}\n")
    w(f"rows = {ml.rows}\n")
    w(f"cols = {ml.cols}\n")
    w(f"spacing_mm = {_fmt(ml.spacing_mm)}\n")
    w("origin_mm =" + (f" {_fmt_vec(ml.origin_mm)}" if ml.origin_mm is not None else "") + "\n")
    w("positions_mm =" + ((" " + " ".join(
        f"{repr(float(x))}:{repr(float(y))}" for x, y in ml.positions_mm))
        if ml.positions_mm else "") + "\n")
    w(f"radius_px = {_fmt(ml.radius_px)}\n")
    w(f"darkness = {_fmt(ml.darkness)}\n")
    w("\n[motion]\n")
    w(f"lambda_d = {_fmt(cfg.motion.lambda_d)}\n")
    w(f"lambda_s = {_fmt(cfg.motion.lambda_s)}\n")
    w(f"lambda_t = {_fmt(cfg.motion.lambda_t)}\n")
    w(f"shear_cap_mm = {_fmt(cfg.motion.shear_cap_mm)}\n")
    w(f"twist_cap_deg = {_fmt(cfg.motion.twist_cap_deg)}\n")
    w("\n[paths]\n")
    w("reflectance_model =" + (f" {cfg.reflectance_model}" if cfg.reflectance_model else "") + "\n")
    w("background_image =" + (f" {cfg.background_image}" if cfg.background_image else "") + "\n")
    with open(path, "w") as f:
        f.write(out.getvalue())


def _parse_float(raw, where, line):
    try:
        return float(raw)
    except ValueError:
        raise ConfigParseError(f"{where}: not a number: {raw!r}", line=line) from None


def _parse_int(raw, where, line):
    try:
        return int(raw)
    except ValueError:
        raise ConfigParseError(f"{where}: not an integer: {raw!r}", line=line) from None


def _parse_vec(raw, n, where, line):
    parts = raw.split()
    if len(parts) != n:
        raise ConfigParseError(f"{where}: expected {n} numbers, got {len(parts)}", line=line)
    return tuple(_parse_float(p, where, line) for p in parts)


def _parse_pairs(raw, sep, where, line):
    out = []
    for tok in raw.split():
        bits = tok.split(sep)
        if len(bits) != 2:
            raise ConfigParseError(f"{where}: bad pair {tok!r}", line=line)
        out.append((_parse_float(bits[0], where, line), _parse_float(bits[1], where, line)))
    return tuple(out)


def load_config(path):
    """Parse and validate a sensor config file.

    Unknown sections or keys are rejected by name with their line number;
    missing optional sections fall back to documented defaults. Files
    referenced under [paths] must exist relative to the config location.
    """
    with open(path) as f:
        text = f.read()
    sections = {"sensor": {}, "smoothing": {}, "shadow": {}, "markers": {},
                "motion": {}, "paths": {}}
    lights = []
    current = None  # (section name, dict)
    schema = None
    for ln, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name == "light":
                lights.append({})
                current = ("light", lights[-1])
            elif name in sections:
                current = (name, sections[name])
            else:
                raise ConfigParseError(f"unknown section [{name}]", line=ln)
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected key = value, got {line!r}", line=ln)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if current is None:
            if key != "schema_version":
                raise ConfigParseError(f"unknown top-level key {key!r}", line=ln)
            schema = _parse_int(value, "schema_version", ln)
            continue
        sec_name, sec = current
        if key not in _SECTION_KEYS[sec_name]:
            raise ConfigParseError(f"unknown key {sec_name}.{key}", line=ln)
        if key in sec:
            raise ConfigParseError(f"duplicate key {sec_name}.{key}", line=ln)
        sec[key] = (value, ln)
    if schema is None:
        raise ValidationError("missing schema_version", field="schema_version")
    if schema != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {schema}", field="schema_version")

    def take(sec, key, default=None):
        if key in sections[sec]:
            return sections[sec][key]
        return (default, None)

    name, _ = take("sensor", "name", "digit")
    width_raw, wl = take("sensor", "width", "240")
    height_raw, hl = take("sensor", "height", "320")
    pitch_raw, pl = take("sensor", "pixel_pitch_mm", "0.06")
    geometry = SensorGeometry(_parse_int(width_raw, "sensor.width", wl),
                              _parse_int(height_raw, "sensor.height", hl),
                              _parse_float(pitch_raw, "sensor.pixel_pitch_mm", pl))
    gel, _ = take("sensor", "gel", "flat")
    thr_raw, tl = take("sensor", "contact_threshold_mm", "0.05")
    threshold = _parse_float(thr_raw, "sensor.contact_threshold_mm", tl)

    kern_raw, kl = take("smoothing", "kernels",
                        " ".join(f"{s}:{g}" for s, g in DEFAULT_KERNELS))
    kernels = tuple((int(s), float(g))
                    for s, g in _parse_pairs(kern_raw, ":", "smoothing.kernels", kl))

    pn_raw, pnl = take("shadow", "plane_normal", "0.0 0.0 1.0")
    po_raw, pol = take("shadow", "plane_offset_mm", "0.0")
    plane = ShadowPlane(_parse_vec(pn_raw, 3, "shadow.plane_normal", pnl),
                        _parse_float(po_raw, "shadow.plane_offset_mm", pol))

    if lights:
        built = []
        for i, sec in enumerate(lights):
            def lkey(key, default):
                return sec.get(key, (default, None))
            kind, _ = lkey("kind", "point")
            pos_raw, posl = lkey("position_mm", "0.0 0.0 10.0")
            dir_raw, dirl = lkey("direction", "0.0 0.0 -1.0")
            tint_raw, tintl = lkey("tint", "1.0 1.0 1.0")
            str_raw, strl = lkey("strength", "0.5")
            built.append(LightSource(
                kind,
                position_mm=_parse_vec(pos_raw, 3, f"light[{i}].position_mm", posl),
                direction=_parse_vec(dir_raw, 3, f"light[{i}].direction", dirl),
                tint=_parse_vec(tint_raw, 3, f"light[{i}].tint", tintl),
                strength=_parse_float(str_raw, f"light[{i}].strength", strl)))
        rig = LightRig(tuple(built), plane)
    else:
        rig = LightRig(_DIGIT_LIGHTS, plane)

    layout, _ = take("markers", "layout", "grid")
    rows_raw, rl = take("markers", "rows", "9")
    cols_raw, cl = take("markers", "cols", "7")
    sp_raw, sl = take("markers", "spacing_mm", "1.8")
    org_raw, ol = take("markers", "origin_mm", "")
    pos_raw, posl = take("markers", "positions_mm", "")
    rad_raw, radl = take("markers", "radius_px", "2.0")
    dark_raw, dl = take("markers", "darkness", "0.85")
    marker_layout = MarkerLayoutSpec(
        layout=layout,
        rows=_parse_int(rows_raw, "markers.rows", rl),
        cols=_parse_int(cols_raw, "markers.cols", cl),
        spacing_mm=_parse_float(sp_raw, "markers.spacing_mm", sl),
        origin_mm=_parse_vec(org_raw, 2, "markers.origin_mm", ol) if org_raw else None,
        positions_mm=_parse_pairs(pos_raw, ":", "markers.positions_mm", posl)
        if pos_raw else (),
        radius_px=_parse_float(rad_raw, "markers.radius_px", radl),
        darkness=_parse_float(dark_raw, "markers.darkness", dl))

    ld_raw, ldl = take("motion", "lambda_d", "0.00125")
    ls_raw, lsl = take("motion", "lambda_s", "0.00021")
    lt_raw, ltl = take("motion", "lambda_t", "0.00038")
    sc_raw, scl = take("motion", "shear_cap_mm", "1.0")
    tc_raw, tcl = take("motion", "twist_cap_deg", "15.0")
    motion = MotionCoefficients(
        lambda_d=_parse_float(ld_raw, "motion.lambda_d", ldl),
        lambda_s=_parse_float(ls_raw, "motion.lambda_s", lsl),
        lambda_t=_parse_float(lt_raw, "motion.lambda_t", ltl),
        shear_cap_mm=_parse_float(sc_raw, "motion.shear_cap_mm", scl),
        twist_cap_deg=_parse_float(tc_raw, "motion.twist_cap_deg", tcl))

    model_rel, _ = take("paths", "reflectance_model", "")
    bg_rel, _ = take("paths", "background_image", "")
    cfg = SensorConfig(
        name=name, geometry=geometry, gel=gel, contact_threshold_mm=threshold,
        kernels=kernels, rig=rig, marker_layout=marker_layout, motion=motion,
        reflectance_model=model_rel or None, background_image=bg_rel or None,
        base_dir=os.path.dirname(os.path.abspath(path)))
    # marker layout must actually fit the sensor
    cfg.marker_field()
    for rel, fieldname in ((cfg.reflectance_model, "paths.reflectance_model"),
                           (cfg.background_image, "paths.background_image")):
        if rel is not None and not os.path.exists(cfg.resolve(rel)):
            raise ValidationError(f"referenced file missing: {cfg.resolve(rel)}",
                                  field=fieldname)
    return cfg


def bundled_config_path(name):
    """Path of a config shipped with the package (digit, gelsight)."""
    here = os.path.dirname(os.path.abspath(__file__))
    path = os.path.join(here, "data", f"{name}.cfg")
    if not os.path.exists(path):
        raise ValidationError(f"no bundled config named {name!r}", field="config")
    return path


def load_bundled_config(name):
    return load_config(bundled_config_path(name))


# ---------------------------------------------------------------- raster file

def save_heightmap(path, hm):
    """Write a height map as a raw little-endian float32 raster."""
    hm.validate()
    data = np.ascontiguousarray(hm.data, dtype="<f4")
    header = [
        RASTER_MAGIC,
        f"version {SCHEMA_VERSION}",
        f"width {hm.width}",
        f"height {hm.height}",
        f"pitch_mm {repr(float(hm.pitch_mm))}",
        "units mm",
        "dtype float32",
        "byteorder little",
        "layout row-major",
        f"min_mm {repr(float(data.min()))}",
        f"max_mm {repr(float(data.max()))}",
        "created tacsim",
        "reserved",
        "reserved",
        "reserved",
        "end_header",
    ]
    assert len(header) == RASTER_HEADER_LINES
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_heightmap(path):
    """Read a raster height map; structured errors on any malformation."""
    from .scene import HeightMap

    with open(path, "rb") as f:
        lines = []
        for _ in range(RASTER_HEADER_LINES):
            line = f.readline()
            if not line:
                raise RasterFormatError("truncated raster header", field=path)
            lines.append(line.decode("ascii", errors="replace").rstrip("\n"))
        if lines[0] != RASTER_MAGIC:
            raise RasterFormatError(f"bad magic {lines[0]!r}", field=path)
        if lines[-1] != "end_header":
            raise RasterFormatError("malformed header (no end_header)", field=path)
        fields = {}
        for line in lines[1:-1]:
            key, _, value = line.partition(" ")
            fields[key] = value
        if fields.get("version") != str(SCHEMA_VERSION):
            raise RasterFormatError(f"unsupported version {fields.get('version')!r}",
                                    field=path)
        if fields.get("dtype") != "float32" or fields.get("byteorder") != "little" \
                or fields.get("layout") != "row-major":
            raise RasterFormatError("unsupported data encoding", field=path)
        try:
            width = int(fields["width"])
            height = int(fields["height"])
            pitch = float(fields["pitch_mm"])
        except (KeyError, ValueError):
            raise RasterFormatError("missing or bad dimensions", field=path) from None
        if not (0 < width <= 10 ** 6) or not (0 < height <= 10 ** 6) \
                or width * height > 10 ** 9:
            raise RasterFormatError(f"dimension overflow: {width} x {height}", field=path)
        nbytes = width * height * 4
        blob = f.read(nbytes + 1)
        if len(blob) < nbytes:
            raise RasterFormatError(
                f"truncated raster data: want {nbytes} bytes, got {len(blob)}", field=path)
        if len(blob) > nbytes:
            raise RasterFormatError("trailing bytes after raster data", field=path)
    data = np.frombuffer(blob, dtype="<f4").reshape(height, width)
    return HeightMap(data.copy(), pitch).validate()


# ---------------------------------------------------------------- PNG rasters

def save_heightmap_png(path, hm, scale_mm_per_level=0.001):
    """Write a height map as 16-bit grayscale PNG with an mm-per-level scale."""
    hm.validate()
    if not (scale_mm_per_level > 0):
        raise ValidationError("scale must be positive", field="scale_mm_per_level")
    levels = np.rint(hm.data.astype(np.float64) / scale_mm_per_level)
    if (levels > 65535).any():
        raise ValidationError(
            f"height {hm.data.max():.4f} mm overflows 16-bit range at scale "
            f"{scale_mm_per_level} mm/level", field="scale_mm_per_level")
    img = Image.fromarray(levels.astype(np.uint16))
    info = PngImagePlugin.PngInfo()
    info.add_text(PNG_SCALE_KEY, repr(float(scale_mm_per_level)))
    info.add_text(PNG_PITCH_KEY, repr(float(hm.pitch_mm)))
    img.save(path, pnginfo=info)


def load_heightmap_png(path, scale_mm_per_level=None, pitch_mm=None):
    """Read a 16-bit grayscale PNG height map.

    Scale and pitch default to the values recorded in the PNG text
    metadata; explicit arguments override.
    """
    from .scene import HeightMap

    img = Image.open(path)
    text = getattr(img, "text", {})
    if scale_mm_per_level is None:
        if PNG_SCALE_KEY not in text:
            raise RasterFormatError(f"{path}: no {PNG_SCALE_KEY} metadata and no "
                                    "explicit scale given")
        scale_mm_per_level = float(text[PNG_SCALE_KEY])
    if pitch_mm is None:
        if PNG_PITCH_KEY not in text:
            raise RasterFormatError(f"{path}: no {PNG_PITCH_KEY} metadata and no "
                                    "explicit pitch given")
        pitch_mm = float(text[PNG_PITCH_KEY])
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise RasterFormatError(f"{path}: not a grayscale image")
    data = arr.astype(np.float64) * scale_mm_per_level
    return HeightMap(data.astype(np.float32), pitch_mm).validate()


def save_image_png(path, image):
    """Write an 8-bit RGB tactile image losslessly."""
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("image must be 8-bit RGB", field="image")
    Image.fromarray(img, mode="RGB").save(path)


def load_image_png(path):
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img)


# ---------------------------------------------------------------- model files

def save_model(path, model, manifest=None):
    """Serialize a reflectance model: magic, JSON header, float32 tensors.

    When `manifest` (a dict) is given, a human-readable key = value
    companion is written next to the model as path + '.manifest'.
    """
    tensors = model.state_items()
    header = {
        "version": MODEL_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "bn_eps": model.bn_eps,
        "features": list(FEATURE_NAMES),
        "outputs": list(OUTPUT_NAMES),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if manifest is not None:
        lines = [f"{k} = {v}" for k, v in manifest.items()]
        with open(str(path) + ".manifest", "w") as f:
            f.write("\n".join(lines) + "\n")


def load_model(path):
    """Load a reflectance model; structured errors on malformation."""
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}", field=path)
        try:
            header = json.loads(f.readline().decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ModelFormatError("bad JSON header", field=path) from None
        if header.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported version {header.get('version')!r}",
                                   field=path)
        model = ReflectanceModel(layer_sizes=header["layer_sizes"],
                                 bn_eps=header.get("bn_eps", 1e-5))
        expected = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
        own = [(name, arr.shape) for name, arr in model.state_items()]
        if expected != own:
            raise ModelFormatError("tensor table does not match the declared layers",
                                   field=path)
        arrays = []
        for name, shape in expected:
            n = int(np.prod(shape)) if shape else 1
            blob = f.read(n * 4)
            if len(blob) < n * 4:
                raise ModelFormatError(f"truncated tensor {name}", field=path)
            arrays.append(np.frombuffer(blob, dtype="<f4").reshape(shape))
        if f.read(1):
            raise ModelFormatError("trailing bytes after tensors", field=path)
    model.set_state(arrays)
    return model


def dataset_hash(dataset):
    """Stable content hash of an RGB-Normal dataset, for model manifests."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(dataset.targets, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ManifestImage:
    """One annotated calibration frame referenced from a JSON manifest."""

    path: str
    center_mm: tuple
    depth_mm: float
    ball_radius_mm: float
    vertices_mm: tuple = ()


@dataclass(frozen=True)
class CalibrationManifest:
    background: str | None
    images: tuple
    base_dir: str = "."

    def resolve(self, rel):
        return os.path.normpath(os.path.join(self.base_dir, rel))


def load_calibration_manifest(path):
    """Parse a JSON calibration manifest (ball presses with annotations).

    Schema: {"background": "bg.png", "images": [{"path": ..., "center_mm":
    [x, y], "depth_mm": d, "ball_radius_mm": r, "vertices_mm": [[x, y] |
    null, ...]}, ...]}. vertices_mm is optional and aligns with the
    rig's lights.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"bad JSON in {path}: {e}", line=e.lineno) from None
    if not isinstance(doc, dict) or "images" not in doc:
        raise ValidationError("manifest must be an object with an 'images' list",
                              field="manifest")
    images = []
    for i, rec in enumerate(doc["images"]):
        try:
            verts = rec.get("vertices_mm", [])
            images.append(ManifestImage(
                path=rec["path"],
                center_mm=tuple(float(v) for v in rec["center_mm"]),
                depth_mm=float(rec["depth_mm"]),
                ball_radius_mm=float(rec["ball_radius_mm"]),
                vertices_mm=tuple(None if v is None else tuple(float(x) for x in v)
                                  for v in verts)))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"bad record: {e}", field=f"manifest.images[{i}]") from None
    return CalibrationManifest(background=doc.get("background"),
                               images=tuple(images),
                               base_dir=os.path.dirname(os.path.abspath(path)))


def config_with_rig(cfg, rig):
    """Copy of a config with a replacement light rig."""
    return replace(cfg, rig=rig)


def config_with_motion(cfg, motion):
    """Copy of a config with replacement motion coefficients."""
    return replace(cfg, motion=motion)
