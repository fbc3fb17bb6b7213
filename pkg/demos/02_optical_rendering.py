"""Train a reflectance model on synthetic data and render tactile frames.

A stand-in sensor with a simple linear shading law provides training
pairs; the MLP learns it, then shades held-out presses. With real
hardware you would build the dataset from annotated ball presses via
`tacsim calibrate optics` instead.
"""

from pathlib import Path

import numpy as np

from tacsim.config_io import load_bundled_config, save_image_png, save_model
from tacsim.optics import RGBNormalDataset, TrainingConfig, shade, train_reflectance
from tacsim.pipeline import render_frame
from tacsim.scene import ContactPose, IndenterShape, render_height_map

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = load_bundled_config("digit")
geom = cfg.geometry

# toy shading law: base color plus gradient- and position-dependent terms
BASE = np.array([150.0, 148.0, 152.0])
GMAT = np.array([[45.0, -20.0, 25.0], [-25.0, 40.0, -18.0]])
PMAT = np.array([[1.0, -0.6, 0.5], [-0.7, 1.1, 0.6]])


def toy_sensor(gx, gy, px, py):
    feats_g = np.stack([gx, gy], axis=-1)
    feats_p = np.stack([px, py], axis=-1)
    return np.clip(BASE + feats_g @ GMAT + feats_p @ PMAT, 0, 255)


rng = np.random.default_rng(0)
n = 20000
feats = np.column_stack([
    rng.uniform(-1.2, 1.2, (n, 2)),
    rng.uniform(0, geom.area_mm[0], (n, 1)),
    rng.uniform(0, geom.area_mm[1], (n, 1)),
])
targets = toy_sensor(feats[:, 0], feats[:, 1], feats[:, 2], feats[:, 3])
dataset = RGBNormalDataset(feats, targets)

model, history = train_reflectance(
    dataset, TrainingConfig(epochs=40, batch_size=256, lr=3e-3, seed=0))
print(f"trained on {dataset.size} samples: validation RMSE "
      f"{history['val_rmse_255']:.2f}/255 (best epoch {history['best_epoch']})")
save_model(out_dir / "toy_model.bin", model)

# background = the sensor's response to a flat gel
ys, xs = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
px = (xs + 0.5) * geom.pitch_mm
py = (ys + 0.5) * geom.pitch_mm
background = toy_sensor(np.zeros_like(px), np.zeros_like(py), px, py)
background = np.rint(background).astype(np.uint8)
save_image_png(out_dir / "background.png", background)

center = (geom.area_mm[0] / 2, geom.area_mm[1] / 2)
for name, shape, depth in [("sphere", IndenterShape.sphere(3.0), 0.5),
                           ("prism", IndenterShape.prism(4.5), 0.3)]:
    hm = render_height_map(shape, ContactPose(center, depth), geom)
    plain = shade(hm, model, background, cfg.kernels, cfg.contact_threshold_mm)
    save_image_png(out_dir / f"render_{name}_shade.png", plain)
    framed, _ = render_frame(hm, cfg, model, background, shadows=True, markers=True)
    save_image_png(out_dir / f"render_{name}_full.png", framed)
    print(f"{name}: wrote render_{name}_shade.png and render_{name}_full.png")
