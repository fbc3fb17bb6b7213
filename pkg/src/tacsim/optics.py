"""Optical tactile rendering: smoothing, gradients, reflectance calibration.

The pipeline mirrors how an elastomer image forms: the contact height map
is smoothed with a pyramid of Gaussian kernels (soft gel rounds hard
edges), the smoothed surface is differentiated, and a learned reflectance
map turns (gradient, position) into RGB. Calibration builds the training
set from ball presses where the surface gradient is known analytically.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import BoundsError, TrainingDivergedError, ValidationError
from .mlp import ReflectanceModel, Adam
from .scene import HeightMap

# (kernel size, sigma) pairs applied in order, coarse last
DEFAULT_KERNELS = ((5, 1.0), (11, 2.0), (21, 4.0))

DEFAULT_CONTACT_THRESHOLD_MM = 0.05
BLEND_WIDTH_PX = 3


def _check_kernels(kernels):
    if not kernels:
        raise ValidationError("kernel list must be non-empty", field="smoothing.kernels")
    for size, sigma in kernels:
        if size < 3 or size % 2 == 0:
            raise ValidationError(f"kernel size {size} must be odd and >= 3",
                                  field="smoothing.kernels")
        if not (sigma > 0):
            raise ValidationError(f"sigma {sigma} must be positive", field="smoothing.kernels")


def smooth_height_map(hm, kernels=DEFAULT_KERNELS):
    """Apply the Gaussian pyramid to a height map, replicate borders.

    Kernels are normalized, so a constant map stays constant and total
    height mass is preserved away from borders.
    """
    _check_kernels(kernels)
    hm.validate()
    out = hm.data.astype(np.float32, copy=True)
    for size, sigma in kernels:
        out = cv2.GaussianBlur(out, (size, size), float(sigma),
                               borderType=cv2.BORDER_REPLICATE)
    np.maximum(out, 0.0, out=out)
    return HeightMap(out, hm.pitch_mm)


def smoothing_radius(kernels=DEFAULT_KERNELS):
    """Total support radius of the pyramid in pixels (sum of kernel radii)."""
    _check_kernels(kernels)
    return sum((size - 1) // 2 for size, _ in kernels)


def gradients(hm):
    """Pitch-normalized height gradients (dH/dx, dH/dy) in mm per mm.

    Central differences inside, one-sided at the borders.
    """
    if hm.height < 3 or hm.width < 3:
        raise ValidationError("raster too small for gradients (need 3x3)",
                              field="heightmap.data")
    gy, gx = np.gradient(hm.data.astype(np.float64), hm.pitch_mm)
    return gx, gy


def position_features(geom):
    """Normalized pixel-center positions in [0, 1]: (px[W], py[H])."""
    px = (np.arange(geom.width) + 0.5) / geom.width
    py = (np.arange(geom.height) + 0.5) / geom.height
    return px, py


@dataclass(frozen=True)
class CalibrationImage:
    """One ball-press calibration frame with its annotation."""

    image: np.ndarray  # uint8 (H, W, 3)
    center_mm: tuple
    depth_mm: float
    ball_radius_mm: float


@dataclass
class RGBNormalDataset:
    """Paired (gradient, position) features and RGB targets from ball presses."""

    features: np.ndarray  # (N, 4) float64: grad_x, grad_y, pos_x, pos_y
    targets: np.ndarray  # (N, 3) float64 in [0, 255]
    per_image_counts: list = field(default_factory=list)

    @property
    def size(self):
        return self.features.shape[0]


def contact_circle_radius(ball_radius_mm, depth_mm):
    """In-plane radius of the contact circle of a ball pressed depth mm."""
    if not (0 < depth_mm < ball_radius_mm):
        raise ValidationError("depth must lie in (0, ball radius)", field="depth_mm")
    return float(np.sqrt(depth_mm * (2.0 * ball_radius_mm - depth_mm)))


def build_rgb_normal_dataset(images, background, geom, shadow_drop_threshold=20.0):
    """Collect training pairs from annotated ball presses.

    For every pixel inside a press's contact circle the surface gradient
    comes from the ball geometry in closed form; the pixel's RGB is the
    target. Pixels whose luma drops more than `shadow_drop_threshold`
    below the background are treated as cast shadow and excluded, which
    decouples reflectance from shadows.
    """
    from .metrics import luma

    background = _check_image(background, geom, "background")
    bg_luma = luma(background)
    px, py = position_features(geom)
    xs, ys = geom.pixel_centers()
    w_mm, h_mm = geom.area_mm
    feats, targs, counts = [], [], []
    for idx, ci in enumerate(images):
        img = _check_image(ci.image, geom, f"images[{idx}]")
        r = float(ci.ball_radius_mm)
        cx, cy = float(ci.center_mm[0]), float(ci.center_mm[1])
        a = contact_circle_radius(r, ci.depth_mm)
        if cx - a < 0 or cx + a > w_mm or cy - a < 0 or cy + a > h_mm:
            raise BoundsError(
                f"images[{idx}]: contact circle (center ({cx}, {cy}), radius {a:.3f} mm) "
                "exceeds the image bounds")
        dx = xs[None, :] - cx
        dy = ys[:, None] - cy
        rho2 = dx * dx + dy * dy
        inside = rho2 < a * a
        shadowed = (bg_luma - luma(img)) > shadow_drop_threshold
        keep = inside & ~shadowed
        rows, cols = np.nonzero(keep)
        denom = np.sqrt(r * r - rho2[rows, cols])
        gx = -dx[0, cols] / denom
        gy = -dy[rows, 0] / denom
        f = np.column_stack((gx, gy, px[cols], py[rows]))
        t = img[rows, cols, :].astype(np.float64)
        feats.append(f)
        targs.append(t)
        counts.append(rows.size)
    if feats:
        features = np.concatenate(feats, axis=0)
        targets = np.concatenate(targs, axis=0)
    else:
        features = np.zeros((0, 4))
        targets = np.zeros((0, 3))
    return RGBNormalDataset(features, targets, counts)


@dataclass(frozen=True)
class TrainingConfig:
    """Hyper-parameters for reflectance training."""

    epochs: int = 80
    batch_size: int = 256
    lr: float = 3e-3
    val_fraction: float = 0.1
    seed: int = 0
    bn_momentum: float = 0.1


def train_reflectance(dataset, hyper=TrainingConfig()):
    """Fit the reflectance MLP to a dataset by Adam on mean squared error.

    Features and targets are standardized with training-split statistics
    (stored in the model, so inference takes raw features and returns raw
    RGB). A held-out fraction tracks validation loss and the best-epoch
    weights are kept. Returns (model, history) where history carries the
    per-epoch losses on the standardized scale plus the validation RMSE
    on the 0-255 scale.
    """
    if dataset.size == 0:
        raise ValidationError("dataset is empty", field="dataset")
    if not (0 <= hyper.val_fraction < 1):
        raise ValidationError("val_fraction must lie in [0, 1)", field="hyper.val_fraction")
    rng = np.random.default_rng(hyper.seed)
    n = dataset.size
    order = rng.permutation(n)
    n_val = int(round(n * hyper.val_fraction))
    if n >= 2 and hyper.val_fraction > 0:
        n_val = max(n_val, 1)
    n_val = min(n_val, n - 1) if n >= 2 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_raw = np.asarray(dataset.features, dtype=np.float64)
    y_raw = np.asarray(dataset.targets, dtype=np.float64)

    model = ReflectanceModel(seed=hyper.seed)
    model.feat_mean = x_raw[train_idx].mean(axis=0)
    model.feat_std = np.maximum(x_raw[train_idx].std(axis=0), 1e-8)
    model.out_mean = y_raw[train_idx].mean(axis=0)
    model.out_std = np.maximum(y_raw[train_idx].std(axis=0), 1e-8)

    x = (x_raw - model.feat_mean) / model.feat_std
    y = (y_raw - model.out_mean) / model.out_std
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    opt = Adam(model, lr=hyper.lr)
    history = {"train_loss": [], "val_loss": [], "best_epoch": 0}
    best_val = np.inf
    best_state = None
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(x_tr))
        batch_losses = []
        for start in range(0, len(perm), hyper.batch_size):
            sel = perm[start:start + hyper.batch_size]
            loss, grads = model.loss_and_grads(x_tr[sel], y_tr[sel])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}", epoch=epoch)
            model.absorb_last_stats(hyper.bn_momentum)
            opt.step(grads)
            batch_losses.append(loss)
        history["train_loss"].append(float(np.mean(batch_losses)))
        if len(x_val):
            resid = model.forward_eval(x_val) - y_val
            val_loss = float(np.mean(resid * resid))
        else:
            val_loss = history["train_loss"][-1]
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = [arr.copy() for _, arr in model.state_items()]
            history["best_epoch"] = epoch
    if best_state is not None:
        model.set_state(best_state)
    if len(x_val):
        pred = model.forward_eval(x_val) * model.out_std + model.out_mean
        history["val_rmse_255"] = float(np.sqrt(np.mean((pred - y_raw[val_idx]) ** 2)))
    else:
        pred = model.forward_eval(x_tr) * model.out_std + model.out_mean
        history["val_rmse_255"] = float(np.sqrt(np.mean((pred - y_raw[train_idx]) ** 2)))
    return model, history


def model_background_residual(model, background, geom, sample_step=8):
    """Max per-channel L1 gap between zero-gradient predictions and background.

    Samples the raster on a stride grid; a well-calibrated model should
    reproduce the background color from zero gradients everywhere.
    """
    background = _check_image(background, geom, "background")
    px, py = position_features(geom)
    cols = np.arange(0, geom.width, sample_step)
    rows = np.arange(0, geom.height, sample_step)
    cc, rr = np.meshgrid(cols, rows)
    cc, rr = cc.ravel(), rr.ravel()
    feats = np.column_stack((np.zeros(cc.size), np.zeros(cc.size), px[cc], py[rr]))
    pred = model.predict(feats.astype(np.float32))
    ref = background[rr, cc, :].astype(np.float32)
    return float(np.abs(pred - ref).max())


def shade(hm, model, background, kernels=DEFAULT_KERNELS,
          threshold_mm=DEFAULT_CONTACT_THRESHOLD_MM, blend_px=BLEND_WIDTH_PX):
    """Render the tactile RGB image for a height map.

    The smoothed map is differentiated, in-contact pixels (post-smoothing
    height above threshold, dilated by the largest kernel radius) are
    shaded by the reflectance model, and the result is feathered into the
    background over `blend_px` pixels. With no contact the background is
    returned unchanged, byte for byte.
    """
    geom = hm.geometry()
    background = _check_image(background, geom, "background")
    smoothed = smooth_height_map(hm, kernels)
    mask = smoothed.data > threshold_mm
    if not mask.any():
        return background.copy()
    radius = max((size - 1) // 2 for size, _ in kernels)
    kernel = np.ones((2 * radius + 1, 2 * radius + 1), np.uint8)
    mask_u8 = cv2.dilate(mask.astype(np.uint8), kernel)
    gx, gy = gradients(smoothed)
    px, py = position_features(geom)
    rows, cols = np.nonzero(mask_u8)
    feats = np.column_stack((gx[rows, cols], gy[rows, cols], px[cols], py[rows]))
    pred = model.predict(feats.astype(np.float32))
    dist = cv2.distanceTransform(mask_u8, cv2.DIST_L2, 5)
    alpha = np.minimum(dist[rows, cols] / float(blend_px), 1.0).astype(np.float32)
    bg_px = background[rows, cols, :].astype(np.float32)
    mixed = alpha[:, None] * pred + (1.0 - alpha[:, None]) * bg_px
    out = background.copy()
    out[rows, cols, :] = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    return out


def _check_image(img, geom, name):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"{name} must be an 8-bit RGB image", field=name)
    if img.shape[0] != geom.height or img.shape[1] != geom.width:
        raise ValidationError(
            f"{name} is {img.shape[1]}x{img.shape[0]}, sensor wants "
            f"{geom.width}x{geom.height}", field=name)
    return img
