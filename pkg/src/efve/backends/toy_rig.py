"""Analytic face rig behind the toy backend.

The rig draws a 64x64 RGB face from smooth, compactly supported primitives on
a canonical coordinate grid.  Design properties everything else relies on:

* every drawable is C^2-smooth in pixel coordinates and in all parameters, so
  analytic gradients exist everywhere and finite-difference checks pass;
* deformation channels enter LINEARLY: the image is
      bg*(1-F) + (skin + base_features + sum_k amp_k * field_k) * F
  where F is the pose-warped face support and each field is a fixed pattern
  warped by the same pose.  Given the pose, recovering all channel amplitudes
  is one exact linear solve, which is what makes the analytic inverse work;
* head pose (yaw, pitch) acts only through the coordinate warp: a shear+shift
  with cos() foreshortening, monotone over the supported range, so pose
  optimization has a unique in-range optimum;
* every deformation pattern is compactly supported STRICTLY inside its
  attribute region, so perturbing a channel changes nothing outside its mask
  (exact zeros, not just small values).

Channel map: 6 layers x 16 channels.  Layer 0 holds pose and global color
channels, layer 1 identity textures and eye openness, layers 2-5 the mouth /
chin / gaze / eye / brow deformations.  Channels 8..15 are dead except (2,8),
a deliberate redundant twin of the mouth-open channel (2,0) used by the
non-uniqueness diagnostics.  The style affine is A_l = [I_8; B_l] with fixed
seeded B_l, so active channels sit on the first eight rows and any
combination of channel amplitudes is reachable from W+ (the inverse is exact
for in-domain images).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IMG_SIZE = 64
N_LAYERS = 6
W_DIM = 8
SS_WIDTH = 16
LAYOUT_SEED = 20240811

POSE_GAIN_DEG = 15.0  # degrees of rotation per unit of a pose channel
YAW_SHIFT, YAW_SHEAR = 0.35, 0.12
PITCH_SHIFT, PITCH_SHEAR = 0.30, 0.10

FACE_AXES = (0.62, 0.78)
FACE_EDGE_IN, FACE_EDGE_OUT = 0.96, 1.06

SKIN_BASE = np.array([206.0, 168.0, 148.0])
BG_BASE = np.array([142.0, 156.0, 170.0])

EYE_CENTERS = ((-0.30, -0.22), (0.30, -0.22))
PUPIL_CENTERS = ((-0.30, -0.20), (0.30, -0.20))
PUPIL_HALF = (0.055, 0.05)
OPENNESS_PER_UNIT = 0.5  # eye openness = 1 + 0.5 * channel value
BLINK_OPENNESS = 0.15

_DARK = (-1.0, -0.95, -0.9)
_LIPRED = (0.9, -0.35, -0.3)
_SOFT = (-1.0, -0.9, -0.8)
_BRIGHT = (1.0, 1.0, 1.0)
_LID = (0.45, 0.28, 0.12)


# ---------------------------------------------------------------------------
# smooth primitives


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_d(t):
    tc = np.clip(t, 0.0, 1.0)
    d = 30.0 * tc * tc * (1.0 - tc) ** 2
    return np.where((t > 0.0) & (t < 1.0), d, 0.0)


def _bump_q(q):
    """exp(1 - 1/(1-q)) on q < 1, 0 elsewhere; returns (value, d/dq)."""
    safe = np.minimum(q, 1.0 - 1e-9)
    inside = q < 1.0 - 1e-9
    one_m = 1.0 - safe
    val = np.where(inside, np.exp(1.0 - 1.0 / one_m), 0.0)
    dval = np.where(inside, -val / (one_m * one_m), 0.0)
    return val, dval


@dataclass(frozen=True)
class Bump:
    u0: float
    v0: float
    au: float
    av: float
    rot_deg: float = 0.0

    def support_bounds(self):
        c = abs(math.cos(math.radians(self.rot_deg)))
        s = abs(math.sin(math.radians(self.rot_deg)))
        return (self.u0, self.v0, self.au * c + self.av * s, self.au * s + self.av * c)

    def eval(self, u, v, want_grad):
        du, dv = u - self.u0, v - self.v0
        if self.rot_deg:
            c, s = math.cos(math.radians(self.rot_deg)), math.sin(math.radians(self.rot_deg))
            ur, vr = c * du + s * dv, -s * du + c * dv
        else:
            c, s = 1.0, 0.0
            ur, vr = du, dv
        su, sv = ur / self.au, vr / self.av
        q = su * su + sv * sv
        val, dq = _bump_q(q)
        if not want_grad:
            return val, None, None
        qu = 2.0 * su / self.au * c + 2.0 * sv / self.av * (-s)
        qv = 2.0 * su / self.au * s + 2.0 * sv / self.av * c
        return val, dq * qu, dq * qv


@dataclass(frozen=True)
class Ring:
    u0: float
    v0: float
    au: float
    av: float
    r0: float
    w: float

    def support_bounds(self):
        reach = self.r0 + self.w
        return (self.u0, self.v0, self.au * reach, self.av * reach)

    def eval(self, u, v, want_grad):
        su, sv = (u - self.u0) / self.au, (v - self.v0) / self.av
        q = su * su + sv * sv
        rho = np.sqrt(np.maximum(q, 1e-18))
        t = (rho - self.r0) / self.w
        val, dt2 = _bump_q(t * t)
        if not want_grad:
            return val, None, None
        drho = dt2 * 2.0 * t / self.w
        gu = drho * (su / self.au) / rho
        gv = drho * (sv / self.av) / rho
        return val, gu, gv


@dataclass(frozen=True)
class Lid:
    """Eyelid annulus: bump with an exact hole over the pupil box."""

    u0: float
    v0: float
    au: float
    av: float
    hu: float
    hv: float
    hx: float
    hy: float
    _START = 1.13  # just outside the box's circumscribing p=6 superellipse
    _WIDTH = 0.25

    def support_bounds(self):
        return (self.u0, self.v0, self.au, self.av)

    def eval(self, u, v, want_grad):
        outer = Bump(self.u0, self.v0, self.au, self.av)
        oval, ou, ov = outer.eval(u, v, want_grad)
        a, b = (u - self.hu) / self.hx, (v - self.hv) / self.hy
        m6 = a**6 + b**6
        m = m6 ** (1.0 / 6.0)
        t = (m - self._START) / self._WIDTH
        hole = _smoothstep(t)
        val = oval * hole
        if not want_grad:
            return val, None, None
        ds = _smoothstep_d(t) / self._WIDTH
        band = ds > 0.0
        m5 = np.where(band, m6 ** (5.0 / 6.0), 1.0)
        dm_du = np.where(band, (a**5) / (self.hx * m5), 0.0)
        dm_dv = np.where(band, (b**5) / (self.hy * m5), 0.0)
        gu = ou * hole + oval * ds * dm_du
        gv = ov * hole + oval * ds * dm_dv
        return val, gu, gv


def _dipole(prims):
    return tuple(prims)


# ---------------------------------------------------------------------------
# channel and base-feature tables


@dataclass(frozen=True)
class Channel:
    name: str
    layer: int
    channel: int
    kind: str  # pose | skin | bg | identity | deform | twin
    group: str | None
    gain: float
    color: tuple | None
    prims: tuple  # ((weight, primitive), ...); shared tuple marks twin fields
    field_key: str | None = None


def _ch(name, lc, kind, group, gain, color, prims, field_key=None):
    return Channel(name, lc[0], lc[1], kind, group, gain, color, tuple(prims), field_key or name)


_M_OPEN_PRIMS = ((1.0, Bump(0.0, 0.435, 0.16, 0.085)),)

CHANNELS = (
    _ch("pose_yaw", (0, 0), "pose", None, POSE_GAIN_DEG, None, ()),
    _ch("pose_pitch", (0, 1), "pose", None, POSE_GAIN_DEG, None, ()),
    _ch("skin_r", (0, 2), "skin", None, 30.0, (1, 0, 0), ()),
    _ch("skin_g", (0, 3), "skin", None, 30.0, (0, 1, 0), ()),
    _ch("skin_b", (0, 4), "skin", None, 30.0, (0, 0, 1), ()),
    _ch("bg_r", (0, 5), "bg", None, 40.0, (1, 0, 0), ()),
    _ch("bg_g", (0, 6), "bg", None, 40.0, (0, 1, 0), ()),
    _ch("bg_b", (0, 7), "bg", None, 40.0, (0, 0, 1), ()),
    _ch("id_blush_l", (1, 0), "identity", None, 25.0, (0.9, -0.1, 0.05), ((1.0, Bump(-0.40, 0.14, 0.10, 0.07)),)),
    _ch("id_blush_r", (1, 1), "identity", None, 25.0, (0.9, -0.1, 0.05), ((1.0, Bump(0.40, 0.14, 0.10, 0.07)),)),
    _ch("id_forehead", (1, 2), "identity", None, 25.0, (0.5, 0.45, 0.35), ((1.0, Bump(0.0, -0.60, 0.22, 0.055)),)),
    _ch("id_noseside", (1, 3), "identity", None, 20.0, (-0.5, -0.45, -0.4),
        _dipole(((1.0, Bump(-0.10, 0.10, 0.032, 0.10)), (1.0, Bump(0.10, 0.10, 0.032, 0.10))))),
    _ch("id_temple", (1, 4), "identity", None, 20.0, (-0.4, -0.35, -0.3),
        _dipole(((1.0, Bump(-0.50, 0.02, 0.055, 0.09)), (1.0, Bump(0.50, 0.02, 0.055, 0.09))))),
    _ch("id_cheekline", (1, 5), "identity", None, 20.0, (-0.3, -0.25, -0.2),
        _dipole(((1.0, Bump(-0.26, 0.06, 0.05, 0.10)), (1.0, Bump(0.26, 0.06, 0.05, 0.10))))),
    _ch("eye_open_l", (1, 6), "deform", "eyes", 55.0, _LID,
        ((1.0, Lid(-0.30, -0.22, 0.15, 0.105, -0.30, -0.20, *PUPIL_HALF)),)),
    _ch("eye_open_r", (1, 7), "deform", "eyes", 55.0, _LID,
        ((1.0, Lid(0.30, -0.22, 0.15, 0.105, 0.30, -0.20, *PUPIL_HALF)),)),
    # mouth
    _ch("m_open", (2, 0), "deform", "mouth", 85.0, _DARK, _M_OPEN_PRIMS, "m_open"),
    _ch("m_width", (2, 1), "deform", "mouth", 55.0, _LIPRED,
        _dipole(((1.0, Bump(-0.21, 0.42, 0.06, 0.045)), (1.0, Bump(0.21, 0.42, 0.06, 0.045))))),
    _ch("lip_press", (2, 2), "deform", "mouth", 70.0, _DARK, ((1.0, Bump(0.0, 0.405, 0.20, 0.040)),)),
    _ch("up_lip", (2, 3), "deform", "mouth", 45.0, _LIPRED, ((1.0, Bump(0.0, 0.355, 0.15, 0.030)),)),
    _ch("lo_lip", (2, 4), "deform", "mouth", 45.0, _LIPRED, ((1.0, Bump(0.0, 0.50, 0.15, 0.035)),)),
    _ch("corner_l", (2, 5), "deform", "mouth", 60.0, _DARK, ((1.0, Bump(-0.225, 0.43, 0.045, 0.04)),)),
    _ch("corner_r", (2, 6), "deform", "mouth", 60.0, _DARK, ((1.0, Bump(0.225, 0.43, 0.045, 0.04)),)),
    _ch("pucker", (2, 7), "deform", "mouth", 40.0, _DARK, ((1.0, Ring(0.0, 0.42, 0.11, 0.07, 1.0, 0.35)),)),
    _ch("m_open_b", (2, 8), "twin", "mouth", 85.0, _DARK, _M_OPEN_PRIMS, "m_open"),
    _ch("shade_u", (3, 0), "deform", "mouth", 30.0, _SOFT, ((1.0, Bump(0.0, 0.37, 0.23, 0.045)),)),
    _ch("shade_d", (3, 1), "deform", "mouth", 30.0, _SOFT, ((1.0, Bump(0.0, 0.47, 0.23, 0.05)),)),
    _ch("tongue", (3, 2), "deform", "mouth", 35.0, (0.8, 0.1, 0.1), ((1.0, Bump(0.0, 0.46, 0.06, 0.035)),)),
    _ch("gloss", (3, 3), "deform", "mouth", 30.0, _BRIGHT, ((1.0, Bump(0.0, 0.425, 0.17, 0.032)),)),
    _ch("m_asym", (3, 4), "deform", "mouth", 25.0, _DARK,
        _dipole(((1.0, Bump(-0.12, 0.40, 0.05, 0.035)), (-1.0, Bump(0.12, 0.44, 0.05, 0.035))))),
    _ch("m_purse", (3, 5), "deform", "mouth", 50.0, _DARK, ((1.0, Bump(0.0, 0.42, 0.05, 0.05)),)),
    # gaze (conjugate pupil offsets, strictly inside the pupil boxes)
    _ch("gaze_x", (3, 6), "deform", "gaze", 50.0, _DARK,
        _dipole(((1.0, Bump(-0.278, -0.20, 0.028, 0.030)), (-1.0, Bump(-0.322, -0.20, 0.028, 0.030)),
                 (1.0, Bump(0.322, -0.20, 0.028, 0.030)), (-1.0, Bump(0.278, -0.20, 0.028, 0.030))))),
    _ch("gaze_y", (3, 7), "deform", "gaze", 45.0, _DARK,
        _dipole(((1.0, Bump(-0.30, -0.182, 0.030, 0.026)), (-1.0, Bump(-0.30, -0.218, 0.030, 0.026)),
                 (1.0, Bump(0.30, -0.182, 0.030, 0.026)), (-1.0, Bump(0.30, -0.218, 0.030, 0.026))))),
    # chin / jaw
    _ch("jaw_drop", (4, 0), "deform", "chin_jaw", 55.0, _DARK, ((1.0, Bump(0.0, 0.655, 0.24, 0.06)),)),
    _ch("chin_crease", (4, 1), "deform", "chin_jaw", 45.0, _DARK, ((1.0, Bump(0.0, 0.625, 0.17, 0.038)),)),
    _ch("jaw_l", (4, 2), "deform", "chin_jaw", 40.0, _DARK, ((1.0, Bump(-0.235, 0.645, 0.05, 0.038)),)),
    _ch("jaw_r", (4, 3), "deform", "chin_jaw", 40.0, _DARK, ((1.0, Bump(0.235, 0.645, 0.05, 0.038)),)),
    _ch("chin_dimple", (4, 4), "deform", "chin_jaw", 35.0, _DARK, ((1.0, Bump(0.0, 0.695, 0.04, 0.04)),)),
    _ch("squint_l", (4, 5), "deform", "eyes", 40.0, _DARK, ((1.0, Bump(-0.30, -0.115, 0.10, 0.030)),)),
    _ch("squint_r", (4, 6), "deform", "eyes", 40.0, _DARK, ((1.0, Bump(0.30, -0.115, 0.10, 0.030)),)),
    _ch("eye_shade", (4, 7), "deform", "eyes", 35.0, _DARK,
        _dipole(((1.0, Bump(-0.30, -0.29, 0.12, 0.032)), (1.0, Bump(0.30, -0.29, 0.12, 0.032))))),
    _ch("wrinkle_l", (5, 0), "deform", "eyes", 45.0, _DARK,
        _dipole(((1.0, Bump(-0.47, -0.245, 0.045, 0.028, -20.0)), (1.0, Bump(-0.47, -0.20, 0.045, 0.028, -20.0))))),
    _ch("wrinkle_r", (5, 1), "deform", "eyes", 45.0, _DARK,
        _dipole(((1.0, Bump(0.47, -0.245, 0.045, 0.028, 20.0)), (1.0, Bump(0.47, -0.20, 0.045, 0.028, 20.0))))),
    _ch("brow_l", (5, 2), "deform", "eyebrows", 50.0, _DARK,
        _dipole(((1.0, Bump(-0.30, -0.43, 0.13, 0.030)), (-1.0, Bump(-0.30, -0.37, 0.13, 0.030))))),
    _ch("brow_r", (5, 3), "deform", "eyebrows", 50.0, _DARK,
        _dipole(((1.0, Bump(0.30, -0.43, 0.13, 0.030)), (-1.0, Bump(0.30, -0.37, 0.13, 0.030))))),
    _ch("brow_pinch", (5, 4), "deform", "eyebrows", 45.0, _DARK,
        _dipole(((1.0, Bump(-0.045, -0.39, 0.030, 0.040)), (1.0, Bump(0.045, -0.39, 0.030, 0.040))))),
    _ch("forehead_wrinkle", (5, 5), "deform", "eyebrows", 40.0, _DARK,
        _dipole(((1.0, Bump(0.0, -0.468, 0.28, 0.027)), (1.0, Bump(0.0, -0.503, 0.28, 0.027))))),
)

BASE_FEATURES = (
    ((-45.0, -40.0, -30.0), Ring(-0.30, -0.22, 0.14, 0.095, 1.0, 0.18)),
    ((-45.0, -40.0, -30.0), Ring(0.30, -0.22, 0.14, 0.095, 1.0, 0.18)),
    ((38.0, 38.0, 40.0), Bump(-0.30, -0.22, 0.115, 0.075)),
    ((38.0, 38.0, 40.0), Bump(0.30, -0.22, 0.115, 0.075)),
    ((-55.0, -58.0, -60.0), Bump(-0.30, -0.20, 0.034, 0.034)),
    ((-55.0, -58.0, -60.0), Bump(0.30, -0.20, 0.034, 0.034)),
    ((-14.0, -15.0, -16.0), Bump(0.0, 0.07, 0.035, 0.17)),
    ((-20.0, -18.0, -17.0), Bump(0.0, 0.245, 0.05, 0.03)),
    ((28.0, -18.0, -12.0), Bump(0.0, 0.385, 0.20, 0.034)),
    ((26.0, -16.0, -10.0), Bump(0.0, 0.455, 0.19, 0.036)),
    ((-52.0, -48.0, -42.0), Bump(-0.30, -0.40, 0.15, 0.034, -8.0)),
    ((-52.0, -48.0, -42.0), Bump(0.30, -0.40, 0.15, 0.034, 8.0)),
    ((-10.0, -10.0, -10.0), Bump(0.0, 0.70, 0.20, 0.045)),
)

CHANNEL_BY_NAME = {c.name: c for c in CHANNELS}
CHANNEL_BY_LC = {(c.layer, c.channel): c for c in CHANNELS}
PATTERN_CHANNELS = tuple(c for c in CHANNELS if c.kind != "pose")

# Unique drawable fields (twin channels share one field).
FIELD_KEYS = []
for _c in PATTERN_CHANNELS:
    if _c.field_key not in FIELD_KEYS:
        FIELD_KEYS.append(_c.field_key)
FIELD_KEYS = tuple(FIELD_KEYS)
FIELD_INDEX = {k: i for i, k in enumerate(FIELD_KEYS)}
FIELD_CHANNELS = {k: tuple(c for c in PATTERN_CHANNELS if c.field_key == k) for k in FIELD_KEYS}

DEFAULT_GROUPS = {
    "mouth": [(c.layer, c.channel) for c in CHANNELS if c.group == "mouth" and c.kind == "deform"],
    "chin_jaw": [(c.layer, c.channel) for c in CHANNELS if c.group == "chin_jaw" and c.kind == "deform"],
    "eyes": [(c.layer, c.channel) for c in CHANNELS if c.group == "eyes" and c.kind == "deform"],
    "eyebrows": [(c.layer, c.channel) for c in CHANNELS if c.group == "eyebrows" and c.kind == "deform"],
    "gaze": [(c.layer, c.channel) for c in CHANNELS if c.group == "gaze" and c.kind == "deform"],
}

# Ground truth for index discovery: every channel that drives an attribute,
# including the redundant twin.
TRUTH_GROUPS = {
    name: [(c.layer, c.channel) for c in CHANNELS if c.group == name]
    for name in ("mouth", "chin_jaw", "eyes", "eyebrows", "gaze")
}


def affine_maps():
    rng = np.random.default_rng(LAYOUT_SEED)
    return [0.35 * rng.standard_normal((SS_WIDTH - W_DIM, W_DIM)) for _ in range(N_LAYERS)]


# ---------------------------------------------------------------------------
# pose geometry and scenes


def _grid(size):
    coord = (np.arange(size) + 0.5) / (size / 2.0) - 1.0
    x = np.tile(coord[None, :], (size, 1))
    y = np.tile(coord[:, None], (1, size))
    return x, y


class Scene:
    """Pose-conditioned geometry: warped coordinates, face support, and the
    per-field pattern stack (fields already multiplied by the face support).
    Analytic partials w.r.t. yaw/pitch/roll (radians) are built lazily, as is
    the linear-inverse design matrix and its cached Gram factorization."""

    def __init__(self, size, yaw_deg, pitch_deg, roll_deg):
        self.size = size
        self.pose = (float(yaw_deg), float(pitch_deg), float(roll_deg))
        x, y = _grid(size)
        yr = math.radians(yaw_deg)
        pr = math.radians(pitch_deg)
        rr = math.radians(roll_deg)
        cr, sr = math.cos(rr), math.sin(rr)
        xr = cr * x + sr * y
        yrot = -sr * x + cr * y
        sy, cy = math.sin(yr), math.cos(yr)
        sp, cp = math.sin(pr), math.cos(pr)
        nu = xr - YAW_SHIFT * sy - YAW_SHEAR * sy * yrot
        nv = yrot - PITCH_SHIFT * sp - PITCH_SHEAR * sp * xr
        u = nu / cy
        v = nv / cp
        self.u, self.v = u, v
        self._xr, self._yrot = xr, yrot
        self._trig = (sy, cy, sp, cp)

        ax, av = FACE_AXES
        rho = np.sqrt((u / ax) ** 2 + (v / av) ** 2 + 1e-18)
        t = (FACE_EDGE_OUT - rho) / (FACE_EDGE_OUT - FACE_EDGE_IN)
        self.F = _smoothstep(t)
        self._rho, self._t = rho, t

        # channel fields, face-support folded in
        n = len(FIELD_KEYS)
        self.fields = np.zeros((n, size, size))
        base = np.zeros((size, size, 3))
        for color, prim in BASE_FEATURES:
            sl, val, _, _ = self._eval_prim(prim, False)
            base[sl] += val[:, :, None] * np.asarray(color, dtype=np.float64)
        self.base_inner = base
        F = self.F
        for key in FIELD_KEYS:
            i = FIELD_INDEX[key]
            ch = FIELD_CHANNELS[key][0]
            if ch.kind == "bg":
                self.fields[i] = 1.0 - F
            elif ch.kind == "skin":
                self.fields[i] = F
            else:
                for wgt, prim in ch.prims:
                    sl, val, _, _ = self._eval_prim(prim, False)
                    self.fields[i][sl] += wgt * val
                self.fields[i] *= F

        self.colors = np.array(
            [FIELD_CHANNELS[k][0].color for k in FIELD_KEYS], dtype=np.float64
        )
        self._grad = None
        self._design = None
        self._gram = None

    def _eval_prim(self, prim, want_grad):
        """Evaluate a primitive only inside its pixel bounding box."""
        u0, v0, hu, hv = prim.support_bounds()
        corners = np.array(
            [(u0 - hu, v0 - hv), (u0 - hu, v0 + hv), (u0 + hu, v0 - hv), (u0 + hu, v0 + hv)]
        )
        yaw, pitch, roll = self.pose
        px = project_landmarks(corners, yaw, pitch, roll, size=self.size)
        c0 = max(int(np.floor(px[:, 0].min())) - 1, 0)
        c1 = min(int(np.ceil(px[:, 0].max())) + 2, self.size)
        r0 = max(int(np.floor(px[:, 1].min())) - 1, 0)
        r1 = min(int(np.ceil(px[:, 1].max())) + 2, self.size)
        sl = (slice(r0, r1), slice(c0, c1))
        if r0 >= r1 or c0 >= c1:
            empty = np.zeros((0, 0))
            return sl, empty, empty, empty
        val, gu, gv = prim.eval(self.u[sl], self.v[sl], want_grad)
        return sl, val, gu, gv

    def _ensure_grad(self):
        if self._grad is not None:
            return
        u, v = self.u, self.v
        xr, yrot = self._xr, self._yrot
        sy, cy, sp, cp = self._trig
        du_dyaw = -(YAW_SHIFT + YAW_SHEAR * yrot) + u * sy / cy
        dv_dpitch = -(PITCH_SHIFT + PITCH_SHEAR * xr) + v * sp / cp
        du_droll = (yrot + YAW_SHEAR * sy * xr) / cy
        dv_droll = (-xr - PITCH_SHEAR * sp * yrot) / cp
        zero = np.zeros_like(u)
        du = {"yaw": du_dyaw, "pitch": zero, "roll": du_droll}
        dv = {"yaw": zero, "pitch": dv_dpitch, "roll": dv_droll}
        ax, av = FACE_AXES
        ds = _smoothstep_d(self._t) * (-1.0 / (FACE_EDGE_OUT - FACE_EDGE_IN))
        F_u = ds * (u / ax**2) / self._rho
        F_v = ds * (v / av**2) / self._rho

        base_u = np.zeros((self.size, self.size, 3))
        base_v = np.zeros_like(base_u)
        for color, prim in BASE_FEATURES:
            sl, val, gu, gv = self._eval_prim(prim, True)
            col = np.asarray(color, dtype=np.float64)
            base_u[sl] += gu[:, :, None] * col
            base_v[sl] += gv[:, :, None] * col

        n = len(FIELD_KEYS)
        fields_u = np.zeros((n, self.size, self.size))
        fields_v = np.zeros_like(fields_u)
        F = self.F
        for key in FIELD_KEYS:
            i = FIELD_INDEX[key]
            ch = FIELD_CHANNELS[key][0]
            if ch.kind == "bg":
                fields_u[i], fields_v[i] = -F_u, -F_v
            elif ch.kind == "skin":
                fields_u[i], fields_v[i] = F_u, F_v
            else:
                acc = np.zeros((self.size, self.size))
                acc_u = np.zeros_like(acc)
                acc_v = np.zeros_like(acc)
                for wgt, prim in ch.prims:
                    sl, val, gu, gv = self._eval_prim(prim, True)
                    acc[sl] += wgt * val
                    acc_u[sl] += wgt * gu
                    acc_v[sl] += wgt * gv
                fields_u[i] = acc_u * F + acc * F_u
                fields_v[i] = acc_v * F + acc * F_v
        self._grad = (du, dv, F_u, F_v, base_u, base_v, fields_u, fields_v)

    def render_inner(self, field_amps):
        """Image (before the tail transform) for given per-field amplitudes."""
        img = BG_BASE * (1.0 - self.F)[:, :, None]
        img = img + (SKIN_BASE[None, None, :] + self.base_inner) * self.F[:, :, None]
        amp_colors = field_amps[:, None] * self.colors
        img = img + np.tensordot(self.fields, amp_colors, axes=([0], [0]))
        return img

    def pose_partial(self, field_amps, which):
        """d image / d pose angle (radians) at fixed amplitudes."""
        self._ensure_grad()
        du_map, dv_map, F_u, F_v, base_u, base_v, fields_u, fields_v = self._grad
        du, dv = du_map[which], dv_map[which]
        dF = F_u * du + F_v * dv
        img = (SKIN_BASE - BG_BASE)[None, None, :] * dF[:, :, None]
        img = img + self.base_inner * dF[:, :, None]
        img = img + (base_u * du[:, :, None] + base_v * dv[:, :, None]) * self.F[:, :, None]
        dfields = fields_u * du[None, :, :] + fields_v * dv[None, :, :]
        amp_colors = field_amps[:, None] * self.colors
        img = img + np.tensordot(dfields, amp_colors, axes=([0], [0]))
        return img

    def field_image(self, key):
        i = FIELD_INDEX[key]
        return self.fields[i][:, :, None] * self.colors[i]

    def design_matrix(self, stride: int = 1):
        """(pixels*3, n_fields) column stack for the linear inverse."""
        if self._design is None:
            self._design = {}
        mat = self._design.get(stride)
        if mat is None:
            n = len(FIELD_KEYS)
            f = self.fields[:, ::stride, ::stride]
            cols = (f[:, :, :, None] * self.colors[:, None, None, :]).reshape(n, -1)
            mat = np.ascontiguousarray(cols.T)
            self._design[stride] = mat
        return mat

    def gram_solve(self, rhs_mat, stride: int = 1):
        """Solve (C^T C) x = C^T rhs via a cached Cholesky (tiny ridge for
        safety); rhs_mat is (pixels*3,) or (pixels*3, k)."""
        import scipy.linalg

        cols = self.design_matrix(stride)
        if self._gram is None:
            self._gram = {}
        fac = self._gram.get(stride)
        if fac is None:
            gram = cols.T @ cols
            gram[np.diag_indices_from(gram)] += 1e-9 * max(np.trace(gram) / gram.shape[0], 1.0)
            fac = scipy.linalg.cho_factor(gram)
            self._gram[stride] = fac
        return scipy.linalg.cho_solve(fac, cols.T @ rhs_mat)

    # analytic region masks -------------------------------------------------

    def _ellipse(self, u0, v0, a, b):
        return ((self.u - u0) / a) ** 2 + ((self.v - v0) / b) ** 2 <= 1.0

    def _box(self, u0, v0, hx, hy):
        return (np.abs(self.u - u0) <= hx) & (np.abs(self.v - v0) <= hy)

    def attribute_masks(self):
        """Ground-truth attribute regions, pose-warped; boolean (H, W)."""
        pupil = self._box(*PUPIL_CENTERS[0], *PUPIL_HALF) | self._box(*PUPIL_CENTERS[1], *PUPIL_HALF)
        eyes = (
            self._ellipse(-0.30, -0.22, 0.18, 0.15)
            | self._ellipse(0.30, -0.22, 0.18, 0.15)
            | self._ellipse(-0.47, -0.22, 0.062, 0.09)
            | self._ellipse(0.47, -0.22, 0.062, 0.09)
        ) & ~pupil
        brows = (
            self._ellipse(-0.30, -0.40, 0.17, 0.065)
            | self._ellipse(0.30, -0.40, 0.17, 0.065)
            | self._box(0.0, -0.39, 0.085, 0.055)
            | self._box(0.0, -0.4875, 0.33, 0.050)
        )
        return {
            "mouth": self._ellipse(0.0, 0.42, 0.30, 0.16),
            "chin_jaw": self._ellipse(0.0, 0.68, 0.40, 0.115),
            "eyes": eyes,
            "eyebrows": brows,
            "gaze": pupil,
        }

    def face_mask(self):
        ax, av = FACE_AXES
        return ((self.u / ax) ** 2 + (self.v / av) ** 2) <= 1.0

    def rigid_mask(self):
        masks = self.attribute_masks()
        eyes_full = (
            self._ellipse(-0.30, -0.22, 0.18, 0.15)
            | self._ellipse(0.30, -0.22, 0.18, 0.15)
            | self._ellipse(-0.47, -0.22, 0.062, 0.09)
            | self._ellipse(0.47, -0.22, 0.062, 0.09)
        )
        soft = masks["mouth"] | masks["chin_jaw"] | eyes_full | masks["eyebrows"]
        ax, av = FACE_AXES
        core = ((self.u / ax) ** 2 + (self.v / av) ** 2) <= 0.93**2
        return core & ~soft


_SCENE_CACHE: dict = {}
_SCENE_CACHE_CAP = 16


def get_scene(yaw_deg, pitch_deg, roll_deg=0.0, size=IMG_SIZE) -> Scene:
    key = (size, float(yaw_deg), float(pitch_deg), float(roll_deg))
    sc = _SCENE_CACHE.get(key)
    if sc is None:
        sc = Scene(size, yaw_deg, pitch_deg, roll_deg)
        if len(_SCENE_CACHE) >= _SCENE_CACHE_CAP:
            _SCENE_CACHE.pop(next(iter(_SCENE_CACHE)))
        _SCENE_CACHE[key] = sc
    return sc


# ---------------------------------------------------------------------------
# forward rendering from channel values


def render_from_channels(values: dict, roll_deg: float = 0.0, size: int = IMG_SIZE) -> np.ndarray:
    """Render from a {channel name: value} dict (pose channels in rig units)."""
    yaw = POSE_GAIN_DEG * values.get("pose_yaw", 0.0)
    pitch = POSE_GAIN_DEG * values.get("pose_pitch", 0.0)
    sc = get_scene(yaw, pitch, roll_deg, size=size)
    amps = np.zeros(len(FIELD_KEYS))
    for name, val in values.items():
        ch = CHANNEL_BY_NAME[name]
        if ch.kind == "pose":
            continue
        amps[FIELD_INDEX[ch.field_key]] += ch.gain * val
    return sc.render_inner(amps)


def field_amps_from_ss(ss_channels) -> np.ndarray:
    """Collapse raw style values onto per-field amplitudes (twins merge)."""
    amps = np.zeros(len(FIELD_KEYS))
    for ch in PATTERN_CHANNELS:
        amps[FIELD_INDEX[ch.field_key]] += ch.gain * ss_channels[ch.layer][ch.channel]
    return amps


# ---------------------------------------------------------------------------
# analytic inverse


def _estimate_background(img):
    k = 3
    patches = [img[:k, :k], img[:k, -k:], img[-k:, :k], img[-k:, -k:]]
    return np.mean([p.reshape(-1, 3).mean(axis=0) for p in patches], axis=0)


def _support_centroid(img, bg):
    x, y = _grid(img.shape[0])
    d = np.linalg.norm(img - bg[None, None, :], axis=2)
    ind = d > 0.25 * d.max()
    if not ind.any():
        return 0.0, 0.0, ind
    return float(x[ind].mean()), float(y[ind].mean()), ind


def _pose_seed(cx, cy):
    sy = cx / (YAW_SHIFT + YAW_SHEAR * cy)
    sp = cy / (PITCH_SHIFT + PITCH_SHEAR * cx)
    sy, sp = np.clip(sy, -0.999, 0.999), np.clip(sp, -0.999, 0.999)
    return math.degrees(math.asin(sy)), math.degrees(math.asin(sp))


def _roll_seed(img, bg):
    """Orientation of the face-support ellipse (its long axis is the rolled
    vertical face axis; the distinct 0.62/0.78 semi-axes make this stable)."""
    x, y = _grid(img.shape[0])
    d = np.linalg.norm(img - bg[None, None, :], axis=2)
    ind = d > 0.25 * d.max()
    if not ind.any():
        return 0.0
    w = ind.astype(np.float64)
    tot = w.sum()
    mx, my = (w * x).sum() / tot, (w * y).sum() / tot
    cxx = (w * (x - mx) ** 2).sum() / tot
    cyy = (w * (y - my) ** 2).sum() / tot
    cxy = (w * (x - mx) * (y - my)).sum() / tot
    # major-axis angle from the x-axis; upright face puts it at +-90 deg
    ang = math.degrees(0.5 * math.atan2(2.0 * cxy, cxx - cyy))
    roll = ang - 90.0 if ang > 0 else ang + 90.0
    if roll > 45.0:
        roll -= 180.0
    elif roll < -45.0:
        roll += 180.0
    return roll


@dataclass
class RigFit:
    yaw_deg: float
    pitch_deg: float
    roll_deg: float
    field_amps: np.ndarray  # per FIELD_KEYS, tail-corrected
    residual_rms: float

    def channel_value(self, name: str) -> float:
        """Per-unit value of a channel; a twin's field total lands on the master."""
        ch = CHANNEL_BY_NAME[name]
        if ch.kind == "pose":
            return (self.yaw_deg if name == "pose_yaw" else self.pitch_deg) / POSE_GAIN_DEG
        members = FIELD_CHANNELS[ch.field_key]
        if ch is not members[0]:
            return 0.0
        return float(self.field_amps[FIELD_INDEX[ch.field_key]] / ch.gain)

    def openness(self):
        return (
            1.0 + OPENNESS_PER_UNIT * self.channel_value("eye_open_l"),
            1.0 + OPENNESS_PER_UNIT * self.channel_value("eye_open_r"),
        )


def fit_image(
    img: np.ndarray,
    fit_roll: bool = False,
    tail_gain=None,
    tail_bias=None,
    iters: int = 12,
    init_pose=None,
) -> RigFit:
    """Recover pose and all channel amplitudes from a rig-domain image.

    Closed-form seeds (corner background, support centroid -> pose, dark-blob
    principal axis -> roll) followed by damped Gauss-Newton on the pose
    variables with the amplitudes re-solved exactly at each step (variable
    projection).  Deterministic; out-of-domain images land on a best-effort
    fit with a large residual.
    """
    img = np.asarray(img, dtype=np.float64)
    gain = np.ones(3) if tail_gain is None else np.asarray(tail_gain, dtype=np.float64)
    bias = np.zeros(3) if tail_bias is None else np.asarray(tail_bias, dtype=np.float64)
    work = (img - bias[None, None, :]) / gain[None, None, :]

    bg = _estimate_background(work)
    cx, cy, _ = _support_centroid(work, bg)
    yaw0, pitch0 = _pose_seed(cx, cy)

    # stride-2 fit: ~46 unknowns against 3072 equations is still massively
    # overdetermined and exact in-domain; hard cases get a stride-1 polish
    pose_names = ("yaw", "pitch", "roll") if fit_roll else ("yaw", "pitch")

    def solve_at(yaw_d, pitch_d, roll_d, stride):
        sc = get_scene(yaw_d, pitch_d, roll_d, size=img.shape[0])
        base = sc.render_inner(np.zeros(len(FIELD_KEYS)))[::stride, ::stride].reshape(-1)
        rhs = work[::stride, ::stride].reshape(-1) - base
        amps = sc.gram_solve(rhs, stride)
        resid = rhs - sc.design_matrix(stride) @ amps
        return sc, amps, resid

    def refine(yaw, pitch, roll, stride, n_iters):
        sc, amps, resid = solve_at(yaw, pitch, roll, stride)
        cost = float(resid @ resid)
        n_eq = resid.size
        for _ in range(n_iters):
            if cost / n_eq < 1e-16:
                break
            jac = np.stack(
                [
                    sc.pose_partial(amps, name)[::stride, ::stride].reshape(-1)
                    for name in pose_names
                ],
                axis=1,
            )
            # Kaufman projection: keep only what the amplitude solve can't absorb
            jac = jac - sc.design_matrix(stride) @ sc.gram_solve(jac, stride)
            step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
            step_deg = np.degrees(step)
            if not np.all(np.isfinite(step_deg)):
                break
            scale = 1.0
            improved = False
            for _ in range(6):
                cand = [yaw, pitch, roll]
                for k, name in enumerate(pose_names):
                    idx = {"yaw": 0, "pitch": 1, "roll": 2}[name]
                    cand[idx] += scale * step_deg[k]
                cand[0] = float(np.clip(cand[0], -65.0, 65.0))
                cand[1] = float(np.clip(cand[1], -50.0, 50.0))
                cand[2] = float(np.clip(cand[2], -80.0, 80.0))
                sc2, amps2, resid2 = solve_at(*cand, stride)
                cost2 = float(resid2 @ resid2)
                if cost2 < cost:
                    yaw, pitch, roll = cand
                    sc, amps, resid, cost = sc2, amps2, resid2, cost2
                    improved = True
                    break
                scale *= 0.5
            if not improved or float(np.max(np.abs(step_deg))) * scale < 1e-10:
                break
        return (yaw, pitch, roll), amps, cost / n_eq

    stride = 2 if img.shape[0] >= 32 else 1
    if init_pose is not None:
        seeds = [(init_pose[0], init_pose[1], init_pose[2] if fit_roll else 0.0)]
    elif fit_roll:
        seeds = [(yaw0, pitch0, _roll_seed(work, bg)), (yaw0, pitch0, 0.0)]
    else:
        seeds = [(yaw0, pitch0, 0.0)]
    best = None
    for seed in seeds:
        pose, amps, mean_cost = refine(*seed, stride, iters)
        if best is None or mean_cost < best[2]:
            best = (pose, amps, mean_cost)
        if best[2] < 1e-12:
            break
    if stride > 1 and best[2] > 1e-12:
        pose, amps, mean_cost = refine(*best[0], 1, max(iters // 2, 4))
        if mean_cost < best[2]:
            best = (pose, amps, mean_cost)
    (yaw, pitch, roll), amps, _ = best

    sc = get_scene(yaw, pitch, roll, size=img.shape[0])
    model = sc.render_inner(np.zeros(len(FIELD_KEYS))).reshape(-1)
    model = model + sc.design_matrix() @ amps
    full_resid = work.reshape(-1) - model
    rms = math.sqrt(float(full_resid @ full_resid) / full_resid.size)
    return RigFit(yaw, pitch, roll, amps, rms)


# residual_rms above this (0-255 units) flags an out-of-domain image
OUT_OF_DOMAIN_RMS = 5.0


# ---------------------------------------------------------------------------
# landmarks

_JAW = [("jaw_%d" % i, math.radians(-75 + 9.375 * i)) for i in range(17)]
_FOREHEAD = [("forehead_%d" % i, math.radians(-60 + 10 * i)) for i in range(13)]


def landmark_names():
    names = [n for n, _ in _JAW]
    names += [n for n, _ in _FOREHEAD]
    names += ["brow_l_%d" % i for i in range(5)]
    names += ["brow_r_%d" % i for i in range(5)]
    names += ["nose_%d" % i for i in range(9)]
    names += ["eye_l_%d" % i for i in range(6)]
    names += ["eye_r_%d" % i for i in range(6)]
    names += ["mouth_%d" % i for i in range(20)]
    return tuple(names)


def canonical_landmarks(open_l: float = 1.0, open_r: float = 1.0) -> np.ndarray:
    """(81, 2) landmark positions in canonical (u, v) coordinates."""
    pts = []
    for _, phi in _JAW:
        pts.append((0.62 * 0.98 * math.sin(phi), 0.78 * 0.98 * math.cos(phi)))
    for _, phi in _FOREHEAD:
        pts.append((0.62 * 0.95 * math.sin(phi), -0.78 * 0.95 * math.cos(phi)))
    for t in (-1.0, -0.5, 0.0, 0.5, 1.0):
        pts.append((-0.30 + 0.14 * t, -0.40 - 0.035 * (1 - t * t)))
    for t in (-1.0, -0.5, 0.0, 0.5, 1.0):
        pts.append((0.30 + 0.14 * t, -0.40 - 0.035 * (1 - t * t)))
    for vv in (-0.05, 0.04, 0.13, 0.22):
        pts.append((0.0, vv))
    for uu, vv in ((-0.10, 0.27), (-0.05, 0.29), (0.0, 0.30), (0.05, 0.29), (0.10, 0.27)):
        pts.append((uu, vv))
    for side, o in ((-1.0, open_l), (1.0, open_r)):
        lids = [
            (side * 0.44, -0.22),
            (side * 0.345, -0.22 - 0.055 * o),
            (side * 0.255, -0.22 - 0.055 * o),
            (side * 0.16, -0.22),
            (side * 0.255, -0.22 + 0.055 * o),
            (side * 0.345, -0.22 + 0.055 * o),
        ]
        pts.extend(lids)
    for k in range(12):
        a = 2 * math.pi * k / 12
        pts.append((0.24 * math.cos(a), 0.42 + 0.10 * math.sin(a)))
    for k in range(8):
        a = 2 * math.pi * k / 8
        pts.append((0.13 * math.cos(a), 0.42 + 0.045 * math.sin(a)))
    return np.asarray(pts, dtype=np.float64)


def project_landmarks(pts_uv: np.ndarray, yaw_deg, pitch_deg, roll_deg, size=IMG_SIZE) -> np.ndarray:
    """Map canonical landmarks to pixel coordinates under pose and roll."""
    yr, pr, rr = math.radians(yaw_deg), math.radians(pitch_deg), math.radians(roll_deg)
    sy, cyw = math.sin(yr), math.cos(yr)
    sp, cp = math.sin(pr), math.cos(pr)
    sh, sv = YAW_SHEAR * sy, PITCH_SHEAR * sp
    out = np.empty_like(pts_uv)
    det = 1.0 - sh * sv
    for i, (u0, v0) in enumerate(pts_uv):
        rhs_x = YAW_SHIFT * sy + cyw * u0
        rhs_y = PITCH_SHIFT * sp + cp * v0
        xp = (rhs_x + sh * rhs_y) / det
        ypp = (rhs_y + sv * rhs_x) / det
        cr, sr = math.cos(rr), math.sin(rr)
        x = cr * xp - sr * ypp
        y = sr * xp + cr * ypp
        out[i] = ((x + 1.0) * (size / 2.0) - 0.5, (y + 1.0) * (size / 2.0) - 0.5)
    return out
