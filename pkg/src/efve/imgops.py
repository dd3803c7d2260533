"""Shared raster helpers: rotation, affine warps, polygon masks."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import ValidationError


def rotate_image(img: np.ndarray, angle_deg: float, center_xy, order: int = 3) -> np.ndarray:
    """Rotate image content by ``angle_deg`` (counter-clockwise in pixel
    coordinates with y down) about ``center_xy`` = (x, y).  Cubic-spline
    sampling keeps rotate(+a) after rotate(-a) within 1 LSB on smooth images.
    """
    img = np.asarray(img, dtype=np.float64)
    if abs(angle_deg) < 1e-9:
        return img.copy()
    h, w = img.shape[:2]
    cx, cy = center_xy
    a = np.radians(angle_deg)
    ca, sa = np.cos(a), np.sin(a)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    src_x = cx + ca * dx + sa * dy
    src_y = cy - sa * dx + ca * dy
    coords = np.stack([src_y, src_x])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=order, mode="nearest")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(img[:, :, c], coords, order=order, mode="nearest")
    return out


def rotate_points(points: np.ndarray, angle_deg: float, center_xy) -> np.ndarray:
    """Transform feature coordinates consistently with rotate_image: a feature
    at p in the input lands at rotate_points(p, angle, c) in the output."""
    pts = np.asarray(points, dtype=np.float64)
    a = np.radians(angle_deg)
    ca, sa = np.cos(a), np.sin(a)
    c = np.asarray(center_xy, dtype=np.float64)
    d = pts - c
    # inverse of the sampling map used in rotate_image
    return np.stack([c[0] + ca * d[:, 0] - sa * d[:, 1], c[1] + sa * d[:, 0] + ca * d[:, 1]], axis=1)


def affine_sample(img: np.ndarray, params, order: int = 1) -> np.ndarray:
    """Sample ``img`` at the affine warp of the output grid.

    ``params`` = (p0..p5) maps centered output pixel coords (x, y) to source
    coords x' = (1+p0) x + p1 y + p2, y' = p3 x + (1+p4) y + p5.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x = xs - cx
    y = ys - cy
    p0, p1, p2, p3, p4, p5 = params
    src_x = (1.0 + p0) * x + p1 * y + p2 + cx
    src_y = p3 * x + (1.0 + p4) * y + p5 + cy
    coords = np.stack([src_y, src_x])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=order, mode="nearest")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(img[:, :, c], coords, order=order, mode="nearest")
    return out


def affine_points_to_output(points: np.ndarray, params, shape) -> np.ndarray:
    """Map source-image pixel coordinates to their positions in the output of
    affine_sample (i.e., apply the inverse of the sampling warp)."""
    pts = np.asarray(points, dtype=np.float64)
    h, w = shape[:2]
    c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    p0, p1, p2, p3, p4, p5 = params
    A = np.array([[1.0 + p0, p1], [p3, 1.0 + p4]])
    if abs(np.linalg.det(A)) < 1e-12:
        raise ValidationError("degenerate affine parameters")
    b = np.array([p2, p5])
    return (np.linalg.solve(A, (pts - c - b).T)).T + c


def polygon_mask(points: np.ndarray, shape) -> np.ndarray:
    """Binary mask from a polygon given as (N, 2) pixel (x, y) vertices."""
    h, w = shape[:2]
    im = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(im)
    pts = [(float(x), float(y)) for x, y in np.asarray(points, dtype=np.float64)]
    if len(pts) >= 3:
        draw.polygon(pts, fill=1)
    return np.array(im, dtype=bool)


def dilate(mask: np.ndarray, px: int = 3) -> np.ndarray:
    if px <= 0:
        return mask.astype(bool)
    return ndimage.binary_dilation(mask.astype(bool), iterations=px)


def convex_hull_points(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import ConvexHull

    pts = np.asarray(points, dtype=np.float64)
    hull = ConvexHull(pts)
    return pts[hull.vertices]
