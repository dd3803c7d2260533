"""Desk-scale evaluation metrics: masked L1, PSNR, SSIM, identity loss, and
per-frame signal correlation.

Images are RGB float arrays in [0, 255].  Masked variants ignore out-of-mask
pixels exactly.  PSNR of identical images is +inf (callers serialize it as a
sentinel).  SSIM follows the standard windowed formulation (11x11 Gaussian,
sigma 1.5, K1=0.01, K2=0.03) computed per channel and averaged over the mask.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError

DATA_RANGE = 255.0


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _mask_or_ones(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    m = np.asarray(mask) > 0.5
    if m.shape != shape[:2]:
        raise ValidationError(f"mask shape {m.shape} != image shape {shape[:2]}")
    return m


def masked_l1(a, b, mask=None) -> float:
    a, b = _check_pair(a, b)
    m = _mask_or_ones(mask, a.shape)
    if not m.any():
        raise ValidationError("empty mask")
    diff = np.abs(a - b)
    if a.ndim == 3:
        return float(diff[m].mean())
    return float(diff[m].mean())


def psnr(a, b, mask=None) -> float:
    a, b = _check_pair(a, b)
    m = _mask_or_ones(mask, a.shape)
    if not m.any():
        raise ValidationError("empty mask")
    d = (a - b)[m]
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE * DATA_RANGE / mse)


def _ssim_map_channel(x, y):
    k1, k2, sigma, truncate = 0.01, 0.03, 1.5, 3.5  # 11-tap Gaussian window
    c1 = (k1 * DATA_RANGE) ** 2
    c2 = (k2 * DATA_RANGE) ** 2
    mu_x = gaussian_filter(x, sigma, truncate=truncate)
    mu_y = gaussian_filter(y, sigma, truncate=truncate)
    xx = gaussian_filter(x * x, sigma, truncate=truncate)
    yy = gaussian_filter(y * y, sigma, truncate=truncate)
    xy = gaussian_filter(x * y, sigma, truncate=truncate)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a, b, mask=None) -> float:
    a, b = _check_pair(a, b)
    m = _mask_or_ones(mask, a.shape)
    if not m.any():
        raise ValidationError("empty mask")
    if a.ndim == 2:
        return float(_ssim_map_channel(a, b)[m].mean())
    maps = [_ssim_map_channel(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])]
    return float(np.mean([mp[m].mean() for mp in maps]))


def identity_loss(a, b, embedder) -> float:
    ea = embedder.embed(a)
    eb = embedder.embed(b)
    return float(1.0 - ea @ eb)


def signal_correlation(x, y):
    """Pearson correlation; returns None for constant or too-short series."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise ValidationError(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValidationError("need at least 2 samples")
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
