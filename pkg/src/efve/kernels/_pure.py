"""Numpy implementations of the hot image kernels.

Conventions (shared with the compiled twin in ``_fast.pyx``):

* images are float64 arrays, (H, W) or (H, W, C);
* the blur is the separable 5-tap binomial [1,4,6,4,1]/16 with ZERO padding.
  Zero padding makes the blur exactly self-adjoint, which the hand-written
  backward passes rely on;
* ``down2`` keeps the even-index samples of the blurred image;
* ``up2`` zero-inserts to the target shape, blurs, and scales by 4 (the
  density lost by zero insertion in 2-D).

Adjoint identities used by the gradient code: blur5^T = blur5,
down2^T(y, shape) = up2(y, shape) / 4, up2^T(y) = 4 * down2(y).
"""

from __future__ import annotations

import numpy as np

_W = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur_axis0(x: np.ndarray) -> np.ndarray:
    h = x.shape[0]
    p = np.zeros((h + 4,) + x.shape[1:], dtype=np.float64)
    p[2 : 2 + h] = x
    return (
        _W[0] * p[0:h]
        + _W[1] * p[1 : 1 + h]
        + _W[2] * p[2 : 2 + h]
        + _W[3] * p[3 : 3 + h]
        + _W[4] * p[4 : 4 + h]
    )


def blur5(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = _blur_axis0(x)
    y = np.swapaxes(_blur_axis0(np.swapaxes(y, 0, 1)), 0, 1)
    return y


def down2(x: np.ndarray) -> np.ndarray:
    return blur5(x)[::2, ::2]


def up2(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.zeros((out_h, out_w) + x.shape[2:], dtype=np.float64)
    z[::2, ::2] = x
    return 4.0 * blur5(z)
