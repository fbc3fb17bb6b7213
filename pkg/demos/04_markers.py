"""Marker motion: the three displacement fields, composition, and λ fitting.

Builds the default 63-marker grid, applies dilate/shear/twist loads from
a pressed ball, writes a flow image, and round-trips the motion
coefficients through the least-squares fitter.
"""

from pathlib import Path

import numpy as np

from tacsim.config_io import load_bundled_config, save_image_png
from tacsim.marker import (MotionCoefficients, MotionObservation, compose_motion,
                           dilate_displacement, fit_lambdas, flow_image,
                           shear_displacement, twist_displacement,
                           write_displacement_table)
from tacsim.scene import ContactPose, IndenterShape, contact_state, render_height_map

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = load_bundled_config("digit")
geom = cfg.geometry
field = cfg.marker_field()
print(f"marker grid: {field.count} markers, first {tuple(field.positions_mm[0])}, "
      f"last {tuple(field.positions_mm[-1])} mm")

pose = ContactPose((7.2, 9.6), 0.5, shear=(0.5, 0.2), twist_deg=8.0)
hm = render_height_map(IndenterShape.sphere(3.0), pose, geom)
contact = contact_state(hm, pose, cfg.contact_threshold_mm)

# desk-scale coefficients keep the displacements in a readable range
lam = MotionCoefficients(lambda_d=8.0, lambda_s=0.02, lambda_t=0.03)
d = dilate_displacement(field.positions_mm, contact, lam, stride=4)
s = shear_displacement(field.positions_mm, contact, lam)
t = twist_displacement(field.positions_mm, contact, lam)
motion = compose_motion(field, contact, lam, stride=4)
print(f"max |dilate| {np.abs(d).max():.3f} mm, |shear| {np.abs(s).max():.3f} mm, "
      f"|twist| {np.abs(t).max():.3f} mm")
print(f"composed equals sum of parts: {np.array_equal(motion.displacement_mm, d + s + t)}")

flow = flow_image(field.positions_mm, motion.positions_mm, geom, scale=4.0)
save_image_png(out_dir / "marker_flow.png", flow)
write_displacement_table(out_dir / "marker_motion.table", field.positions_mm,
                         motion.displacement_mm)
print(f"wrote marker_flow.png and marker_motion.table")

# fit the coefficients back from observations generated with the true ones
rng = np.random.default_rng(4)
observations = []
for k in range(15):
    kind = ("dilate", "shear", "twist")[k % 3]
    p = ContactPose((rng.uniform(4, 10.4), rng.uniform(5, 14)), rng.uniform(0.3, 0.5),
                    shear=(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6))
                    if kind == "shear" else (0.0, 0.0),
                    twist_deg=rng.uniform(-12, 12) if kind == "twist" else 0.0)
    chm = render_height_map(IndenterShape.sphere(rng.uniform(1.8, 2.8)), p, geom)
    c = contact_state(chm, p, cfg.contact_threshold_mm)
    disp = {"dilate": dilate_displacement(field.positions_mm, c, lam),
            "shear": shear_displacement(field.positions_mm, c, lam),
            "twist": twist_displacement(field.positions_mm, c, lam)}[kind]
    observations.append(MotionObservation(kind, c, field.positions_mm, disp))

fit, report = fit_lambdas(observations,
                          init=MotionCoefficients(lambda_d=3.0, lambda_s=0.05,
                                                  lambda_t=0.01))
print(f"fitted lambda_d {fit.lambda_d:.4f} (true {lam.lambda_d}), "
      f"lambda_s {fit.lambda_s:.4f} (true {lam.lambda_s}), "
      f"lambda_t {fit.lambda_t:.4f} (true {lam.lambda_t})")
