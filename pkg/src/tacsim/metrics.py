"""Image and marker-field comparison metrics.

L1, MSE and PSNR work on the 0-255 scale averaged over pixels and
channels. SSIM follows the classic single-scale formulation on the luma
channel: 11x11 Gaussian window with sigma 1.5, C1 = (0.01 * 255)^2,
C2 = (0.03 * 255)^2, biased local moments, border windows dropped.
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ValidationError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def luma(image):
    """Rec. 601 luma of an RGB image as float64."""
    img = np.asarray(image, dtype=np.float64)
    return (LUMA_WEIGHTS[0] * img[..., 0] + LUMA_WEIGHTS[1] * img[..., 1]
            + LUMA_WEIGHTS[2] * img[..., 2])


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}", field="images")
    if a.dtype != np.uint8 or b.dtype != np.uint8:
        raise ValidationError("images must be 8-bit", field="images")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValidationError("images must be RGB", field="images")
    return a, b


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b):
    """Structural similarity on luma; symmetric, 1.0 for identical images."""
    a, b = _check_pair(a, b)
    x = luma(a)
    y = luma(b)
    pad = (SSIM_WINDOW - 1) // 2
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValidationError(f"images must be at least {SSIM_WINDOW} px per side",
                              field="images")
    win = _gaussian_window()

    def filt(img):
        return cv2.filter2D(img, -1, win, borderType=cv2.BORDER_REPLICATE)

    ux = filt(x)
    uy = filt(y)
    uxx = filt(x * x)
    uyy = filt(y * y)
    uxy = filt(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    cov = uxy - ux * uy
    num = (2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2)
    smap = num / den
    core = smap[pad:-pad, pad:-pad]
    return float(core.mean())


@dataclass
class ImageMetricsReport:
    """Comparison summary; psnr is math.inf for identical images."""

    l1: float
    mse: float
    psnr: float
    ssim: float

    def to_text(self):
        return ("image comparison\n"
                f"  L1   {fmt_metric(self.l1)}\n"
                f"  MSE  {fmt_metric(self.mse)}\n"
                f"  PSNR {fmt_metric(self.psnr)} dB\n"
                f"  SSIM {fmt_metric(self.ssim)}\n")

    def to_porcelain(self):
        return (f"l1={fmt_metric(self.l1)}\n"
                f"mse={fmt_metric(self.mse)}\n"
                f"psnr={fmt_metric(self.psnr)}\n"
                f"ssim={fmt_metric(self.ssim)}\n")


def fmt_metric(v):
    """Serialize a metric value; infinities become the token 'inf'."""
    if math.isinf(v):
        return "inf"
    return f"{v:.6f}"


def image_metrics(a, b):
    """L1, MSE, PSNR and SSIM between two 8-bit RGB images."""
    a, b = _check_pair(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    l1 = float(np.abs(diff).mean())
    mse = float((diff * diff).mean())
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(255.0 ** 2 / mse)
    return ImageMetricsReport(l1=l1, mse=mse, psnr=psnr, ssim=ssim(a, b))


def marker_l1(pred, truth):
    """Mean L1 norm of per-marker error in mm: mean_i(|dx_i| + |dy_i|)."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if p.shape != t.shape:
        raise ValidationError(f"marker arrays disagree: {p.shape} vs {t.shape}",
                              field="markers")
    if p.shape[0] == 0:
        raise ValidationError("marker arrays are empty", field="markers")
    return float(np.abs(p - t).sum(axis=1).mean())
