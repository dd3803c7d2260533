"""Reference perceptual metric and the masked L2 used across all loss stacks.

The perceptual distance is a masked 4-scale Laplacian-pyramid score: both
images are masked first (so out-of-mask deltas are exactly invisible), then

    d(a, b) = sum over levels k of  sqrt(mean((La_k - Lb_k)^2) + eps^2) - eps

The per-level sqrt makes the score scale ~linearly with the magnitude of the
image difference (a plain squared score would scale quadratically), and the
small eps keeps it differentiable at zero difference.  Means are taken over
the full level grid; masking has already zeroed out-of-mask content.

``masked_rms`` is the pointwise analogue used for the L2 loss terms: RMS of
the masked difference with the same eps smoothing, normalized by the masked
pixel count.

Gradients here are exact adjoints of the forward ops (the pyramid is linear),
so finite-difference checks pass at machine precision.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .kernels import down2, up2

PYR_LEVELS = 4
EPS = 1e-6


def _masked(img: np.ndarray, mask) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if mask is None:
        return img
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != img.shape[:2]:
        raise ValidationError(f"mask shape {m.shape} != image shape {img.shape[:2]}")
    return img * m[:, :, None] if img.ndim == 3 else img * m


def laplacian_pyramid(img: np.ndarray, levels: int = PYR_LEVELS):
    gauss = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        gauss.append(down2(gauss[-1]))
    laps = []
    for k in range(levels - 1):
        h, w = gauss[k].shape[:2]
        laps.append(gauss[k] - up2(gauss[k + 1], h, w))
    laps.append(gauss[-1])
    return laps


def pyramid_distance(a, b, mask=None, levels: int = PYR_LEVELS, eps: float = EPS) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    la = laplacian_pyramid(_masked(a, mask), levels)
    lb = laplacian_pyramid(_masked(b, mask), levels)
    total = 0.0
    for da, db in zip(la, lb):
        msd = np.mean((da - db) ** 2)
        total += np.sqrt(msd + eps * eps) - eps
    return float(total)


def pyramid_distance_grad(a, b, mask=None, levels: int = PYR_LEVELS, eps: float = EPS):
    """Return (distance, d distance / d a).

    Backward pass: per-level cotangents D_k / (N_k * sqrt(msd_k + eps^2)) are
    pulled back through the Laplacian chain using the adjoint identities
    down2^T = up2/4 and up2^T = 4*down2, then the mask is re-applied.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    am = _masked(a, mask)
    bm = _masked(b, mask)

    gauss = [am]
    for _ in range(levels - 1):
        gauss.append(down2(gauss[-1]))
    lb = laplacian_pyramid(bm, levels)

    cot = []  # per-level cotangent of La_k
    total = 0.0
    for k in range(levels):
        if k < levels - 1:
            h, w = gauss[k].shape[:2]
            la_k = gauss[k] - up2(gauss[k + 1], h, w)
        else:
            la_k = gauss[k]
        diff = la_k - lb[k]
        msd = np.mean(diff**2)
        root = np.sqrt(msd + eps * eps)
        total += root - eps
        cot.append(diff / (diff.size * root))

    # Pull cotangents of L_k back to the level-0 Gaussian.
    acc = cot[levels - 1]
    if levels >= 2:
        acc = acc - 4.0 * down2(cot[levels - 2])
    for k in range(levels - 2, -1, -1):
        h, w = gauss[k].shape[:2]
        g = cot[k] + 0.25 * up2(acc, h, w)
        if k >= 1:
            g = g - 4.0 * down2(cot[k - 1])
        acc = g

    grad = _masked(acc, mask)
    return float(total), grad


def masked_rms(a, b, mask, eps: float = EPS) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    m = np.asarray(mask, dtype=np.float64)
    n = m.sum() * (a.shape[2] if a.ndim == 3 else 1)
    if n == 0:
        raise ValidationError("empty mask")
    d = _masked(a - b, m)
    msd = np.sum(d**2) / n
    return float(np.sqrt(msd + eps * eps) - eps)


def masked_rms_grad(a, b, mask, eps: float = EPS):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    n = m.sum() * (a.shape[2] if a.ndim == 3 else 1)
    if n == 0:
        raise ValidationError("empty mask")
    d = _masked(a - b, m)
    msd = np.sum(d**2) / n
    root = np.sqrt(msd + eps * eps)
    val = float(root - eps)
    grad = _masked(d / (n * root), m)
    return val, grad
