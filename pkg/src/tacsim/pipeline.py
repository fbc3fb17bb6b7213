"""Frame composition and the benchmark harness.

render_frame chains the optical stages for one height map: shade via the
reflectance model, darken under per-light shadow masks, optionally stamp
the displaced marker field. The bench harness times the individual
stages on realistic random presses with pinned thread counts.
"""

import time
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ValidationError
from .marker import compose_motion, render_markers, DEFAULT_STRIDE
from .optics import shade, smooth_height_map
from .scene import ContactPose, IndenterShape, contact_state, render_height_map
from .shadow import cast_shadow_mask, composite_shadows

MIN_BENCH_ITERATIONS = 30
BENCH_STAGES = ("shade", "shade_shadows", "markers")


def shadow_masks(hm, rig, threshold_mm):
    """Per-light shadow masks for a height map."""
    return [cast_shadow_mask(hm, light, rig.plane, threshold_mm)
            for light in rig.lights]


def render_frame(hm, cfg, model, background, shadows=True, markers=False,
                 contact=None, stride=DEFAULT_STRIDE):
    """Render one tactile frame under a sensor config.

    `contact` carries the load for marker motion; when omitted it is
    extracted from the height map with the centroid as anchor and no
    tangential load. Returns (image, motion) where motion is the
    MotionResult when markers were rendered, else None.
    """
    img = shade(hm, model, background, cfg.kernels, cfg.contact_threshold_mm)
    if shadows:
        # shadows are cast by the same smoothed surface the shading sees,
        # not by the raw indenter print
        smoothed = smooth_height_map(hm, cfg.kernels)
        masks = shadow_masks(smoothed, cfg.rig, cfg.contact_threshold_mm)
        img = composite_shadows(img, masks, cfg.rig.lights)
    motion = None
    if markers:
        field = cfg.marker_field()
        if contact is None:
            contact = contact_state(hm, None, cfg.contact_threshold_mm)
        motion = compose_motion(field, contact, cfg.motion, stride=stride)
        img = render_markers(img, motion.positions_mm, hm.pitch_mm,
                             field.radius_px, field.darkness)
    return img, motion


@dataclass
class BenchReport:
    """Timing summary for one benchmarked stage."""

    operation: str
    width: int
    height: int
    iterations: int
    warmup: int
    threads: int
    mean_ms: float
    median_ms: float
    p95_ms: float

    @property
    def fps(self):
        return 1000.0 / self.mean_ms

    def to_text(self):
        return (f"{self.operation}: {self.width}x{self.height}, "
                f"{self.iterations} iterations (+{self.warmup} warmup), "
                f"{self.threads} thread(s)\n"
                f"  mean {self.mean_ms:.3f} ms  median {self.median_ms:.3f} ms  "
                f"p95 {self.p95_ms:.3f} ms  -> {self.fps:.1f} fps\n")

    def to_porcelain(self):
        return (f"operation={self.operation}\n"
                f"width={self.width}\nheight={self.height}\n"
                f"iterations={self.iterations}\nwarmup={self.warmup}\n"
                f"threads={self.threads}\n"
                f"mean_ms={self.mean_ms:.6f}\nmedian_ms={self.median_ms:.6f}\n"
                f"p95_ms={self.p95_ms:.6f}\nfps={self.fps:.3f}\n")


def bench_inputs(cfg, seed=0, count=8, ball_radius_mm=3.0, depth_mm=0.5):
    """Random off-center ball presses used as benchmark workloads.

    Fixed shape and depth keep the per-frame work input-independent;
    only the press position varies.
    """
    rng = np.random.default_rng(seed)
    geom = cfg.geometry
    w_mm, h_mm = geom.area_mm
    shape = IndenterShape.sphere(ball_radius_mm)
    margin = ball_radius_mm + 1.0
    out = []
    for _ in range(count):
        cx = rng.uniform(margin, w_mm - margin)
        cy = rng.uniform(margin, h_mm - margin)
        pose = ContactPose((cx, cy), depth_mm, shear=(0.2, -0.1), twist_deg=3.0)
        out.append((render_height_map(shape, pose, geom), pose))
    return out


def _bench_model(cfg, model):
    if model is not None:
        return model
    from .mlp import ReflectanceModel

    # weights are irrelevant for timing; any folded model has the same cost
    return ReflectanceModel(seed=0)


def bench_stage(stage, cfg, model=None, background=None, iterations=60,
                warmup=5, seed=0, threads=1):
    """Time one pipeline stage; returns a BenchReport.

    Uses the monotonic clock, runs `warmup` untimed iterations first and
    requires at least MIN_BENCH_ITERATIONS timed ones. BLAS and OpenCV
    thread pools are pinned to `threads` for the duration.
    """
    if stage not in BENCH_STAGES:
        raise ValidationError(f"unknown stage {stage!r}; pick from {BENCH_STAGES}",
                              field="stage")
    if iterations < MIN_BENCH_ITERATIONS:
        raise ValidationError(f"need >= {MIN_BENCH_ITERATIONS} iterations",
                              field="iterations")
    if warmup < 0:
        raise ValidationError("warmup must be >= 0", field="warmup")
    if threads < 1:
        raise ValidationError("threads must be >= 1", field="threads")
    from threadpoolctl import threadpool_limits

    geom = cfg.geometry
    model = _bench_model(cfg, model)
    if background is None:
        background = np.full((geom.height, geom.width, 3), 120, np.uint8)
    inputs = bench_inputs(cfg, seed=seed)
    marker_field = cfg.marker_field()

    def run(idx):
        hm, pose = inputs[idx % len(inputs)]
        if stage == "shade":
            shade(hm, model, background, cfg.kernels, cfg.contact_threshold_mm)
        elif stage == "shade_shadows":
            img = shade(hm, model, background, cfg.kernels, cfg.contact_threshold_mm)
            smoothed = smooth_height_map(hm, cfg.kernels)
            masks = shadow_masks(smoothed, cfg.rig, cfg.contact_threshold_mm)
            composite_shadows(img, masks, cfg.rig.lights)
        else:
            contact = contact_state(hm, pose, cfg.contact_threshold_mm)
            compose_motion(marker_field, contact, cfg.motion, stride=DEFAULT_STRIDE)

    old_cv2_threads = cv2.getNumThreads()
    cv2.setNumThreads(threads)
    try:
        with threadpool_limits(limits=threads):
            for i in range(warmup):
                run(i)
            samples = np.empty(iterations)
            for i in range(iterations):
                t0 = time.perf_counter()
                run(i)
                samples[i] = time.perf_counter() - t0
    finally:
        cv2.setNumThreads(old_cv2_threads)
    ms = samples * 1000.0
    return BenchReport(
        operation=stage, width=geom.width, height=geom.height,
        iterations=iterations, warmup=warmup, threads=threads,
        mean_ms=float(ms.mean()), median_ms=float(np.median(ms)),
        p95_ms=float(np.percentile(ms, 95)))
