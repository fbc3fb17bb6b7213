"""Planar shadows: projection, cast masks, and light calibration.

Casts per-light shadow masks for a ball press, composites them over a
plain background, then recovers the light positions from the shadow
vertices alone — the same loop `tacsim calibrate lights` runs.
"""

from pathlib import Path

import numpy as np

from tacsim.config_io import load_bundled_config, save_image_png
from tacsim.pipeline import shadow_masks
from tacsim.scene import ContactPose, IndenterShape, render_height_map
from tacsim.shadow import (BallObservation, calibrate_lights, cast_shadow_mask,
                           composite_shadows, find_shadow_vertex,
                           point_shadow_matrix, project_point_shadow)

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = load_bundled_config("digit")
geom = cfg.geometry
plane = cfg.rig.plane

# a single projected point, by matrix and by the convenience wrapper
light = cfg.rig.lights[0]
p = np.array([7.0, 9.0, 0.8])
mat = point_shadow_matrix(light.position_mm, plane)
q_h = mat @ np.append(p, 1.0)
print(f"light 0 at {light.position_mm}")
print(f"matrix projects {p} -> {q_h[:3] / q_h[3]}")
print(f"wrapper agrees:  {project_point_shadow(p, light.position_mm, plane)}")

# per-light masks for a pressed ball, then the composite
centers = [(5.0, 7.0), (9.0, 12.0), (7.2, 9.6), (5.5, 13.0)]
base = np.full((geom.height, geom.width, 3), 165, np.uint8)

hm = render_height_map(IndenterShape.sphere(2.5), ContactPose(centers[2], 0.5), geom)
masks = shadow_masks(hm, cfg.rig, cfg.contact_threshold_mm)
for i, m in enumerate(masks):
    print(f"light {i}: shadow covers {(m > 0.5).sum()} px")
shadowed = composite_shadows(base, masks, cfg.rig.lights)
save_image_png(out_dir / "shadows_composite.png", shadowed)
print(f"wrote {out_dir / 'shadows_composite.png'}")

# light calibration: locate each vertex in the mask, then triangulate.
# The calibration ball is pressed to its equator so the occluder is the
# full hemisphere the tangent construction assumes.
ball_r = 2.0
observations = []
for c in centers:
    hm = render_height_map(IndenterShape.sphere(ball_r), ContactPose(c, ball_r), geom)
    verts = []
    for light in cfg.rig.lights:
        mask = cast_shadow_mask(hm, light, plane, cfg.contact_threshold_mm)
        away = np.degrees(np.arctan2(c[1] - light.position_mm[1],
                                     c[0] - light.position_mm[0]))
        verts.append(find_shadow_vertex(mask, c, away, geom.pitch_mm))
    observations.append(BallObservation(c, ball_r, tuple(verts)))

rig, report = calibrate_lights(observations, cfg.rig)
print(report.to_text(), end="")
for i, (fit, ref) in enumerate(zip(rig.lights, cfg.rig.lights)):
    err = np.linalg.norm(np.asarray(fit.position_mm) - ref.position_mm)
    print(f"light {i}: recovered {tuple(round(float(v), 2) for v in fit.position_mm)} "
          f"(true {ref.position_mm}, off by {err:.2f} mm)")
