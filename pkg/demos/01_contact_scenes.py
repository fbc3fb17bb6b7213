"""Press every indenter shape into the gel and save the height maps.

Outputs 16-bit height-map PNGs plus a binary raster under demos/out/.
"""

from pathlib import Path

from tacsim.config_io import (load_bundled_config, save_heightmap,
                              save_heightmap_png)
from tacsim.scene import ContactPose, IndenterShape, contact_state, render_height_map

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = load_bundled_config("digit")
geom = cfg.geometry
print(f"sensor: {cfg.name}, {geom.width}x{geom.height} px, "
      f"{geom.area_mm[0]:.1f}x{geom.area_mm[1]:.1f} mm active area")

shapes = [
    ("sphere", IndenterShape.sphere(3.0), 0.5),
    ("cylinder", IndenterShape.cylinder(2.5), 0.35),
    ("cuboid", IndenterShape.cuboid(3.0, 4.5), 0.3),
    ("prism", IndenterShape.prism(4.0), 0.3),
    ("cone", IndenterShape.cone(2.5, 1.2), 0.6),
]

center = (geom.area_mm[0] / 2, geom.area_mm[1] / 2)
for name, shape, depth in shapes:
    pose = ContactPose(center, depth, twist_deg=15.0 if name == "cuboid" else 0.0)
    hm = render_height_map(shape, pose, geom)
    contact = contact_state(hm, pose, cfg.contact_threshold_mm)
    png = out_dir / f"scene_{name}.png"
    save_heightmap_png(png, hm, scale_mm_per_level=0.001)
    print(f"{name:9s} depth {depth} mm -> {contact.count:5d} contact px, "
          f"peak {hm.data.max():.3f} mm, wrote {png.name}")

# the binary raster format round-trips float32 exactly
hm = render_height_map(IndenterShape.sphere(3.0), ContactPose(center, 0.5), geom)
save_heightmap(out_dir / "sphere.raster", hm)
print(f"wrote {out_dir / 'sphere.raster'} (lossless float32 raster)")
