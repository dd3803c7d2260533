"""Toy implementations of all six backend interfaces.

Everything is deterministic given the constructor seed.  The generator wraps
the analytic rig; the inverter, identity embedder, face parser, and landmark
tracker are all built on the rig's exact linear inverse, which is what makes
plant-and-recover oracles possible at desk scale.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from ..errors import LayoutError, ValidationError
from ..latent import StyleIndex, StyleSpaceLatent, WPlusLatent
from ..percep import pyramid_distance, pyramid_distance_grad
from . import toy_rig as rig
from .base import (
    FaceParser,
    GeneratorBackend,
    IdentityEmbedder,
    InverterBackend,
    LandmarkTracker,
    LatentLayout,
    PerceptualMetric,
)

_POSE_RAD_PER_UNIT = math.radians(rig.POSE_GAIN_DEG)


class ToyBackend(GeneratorBackend):
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._B = rig.affine_maps()
        self._theta = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        self._layout = LatentLayout(rig.N_LAYERS, rig.W_DIM, (rig.SS_WIDTH,) * rig.N_LAYERS)

    @property
    def layout(self) -> LatentLayout:
        return self._layout

    @property
    def image_shape(self) -> tuple:
        return (rig.IMG_SIZE, rig.IMG_SIZE, 3)

    # -- latent plumbing ----------------------------------------------------

    def to_stylespace(self, latent: WPlusLatent) -> StyleSpaceLatent:
        self._layout.check_wplus(latent)
        chans = [
            np.concatenate([row, self._B[l] @ row])
            for l, row in enumerate(latent.values)
        ]
        return StyleSpaceLatent(chans)

    def pose_edit(self, latent: WPlusLatent, yaw_deg: float, pitch_deg: float) -> WPlusLatent:
        self._layout.check_wplus(latent)
        vals = latent.values.copy()
        vals[0, 0] += yaw_deg / rig.POSE_GAIN_DEG
        vals[0, 1] += pitch_deg / rig.POSE_GAIN_DEG
        return WPlusLatent(vals)

    def _pose_of(self, ss: StyleSpaceLatent):
        return (
            rig.POSE_GAIN_DEG * ss.channels[0][0],
            rig.POSE_GAIN_DEG * ss.channels[0][1],
        )

    # -- rendering ----------------------------------------------------------

    def _tail(self, raw: np.ndarray) -> np.ndarray:
        g, b = self._theta[:3], self._theta[3:]
        return raw * g[None, None, :] + b[None, None, :]

    def generate_ss(self, ss: StyleSpaceLatent, roll_deg: float = 0.0) -> np.ndarray:
        self._layout.check_style(ss)
        yaw, pitch = self._pose_of(ss)
        sc = rig.get_scene(yaw, pitch, roll_deg)
        raw = sc.render_inner(rig.field_amps_from_ss(ss.channels))
        return self._tail(raw)

    def generate(self, latent: WPlusLatent) -> np.ndarray:
        return self.generate_ss(self.to_stylespace(latent))

    def render_with_roll(self, latent: WPlusLatent, roll_deg: float) -> np.ndarray:
        """Toy-only helper used to synthesize raw (pre-alignment) test clips."""
        return self.generate_ss(self.to_stylespace(latent), roll_deg=roll_deg)

    # -- gradients ----------------------------------------------------------

    def generate_ss_grad(self, ss: StyleSpaceLatent, index) -> np.ndarray:
        self._layout.check_style(ss)
        ix = index if isinstance(index, StyleIndex) else StyleIndex(*index)
        ss.check_index(ix)
        g = self._theta[:3]
        ch = rig.CHANNEL_BY_LC.get((ix.layer, ix.channel))
        if ch is None:
            return np.zeros(self.image_shape)
        yaw, pitch = self._pose_of(ss)
        if ch.kind == "pose":
            sc = rig.get_scene(yaw, pitch)
            amps = rig.field_amps_from_ss(ss.channels)
            which = "yaw" if ch.name == "pose_yaw" else "pitch"
            raw = sc.pose_partial(amps, which) * _POSE_RAD_PER_UNIT
        else:
            sc = rig.get_scene(yaw, pitch)
            raw = ch.gain * sc.field_image(ch.field_key)
        return raw * g[None, None, :]

    def generate_ss_vjp(self, ss: StyleSpaceLatent, cotangent: np.ndarray) -> StyleSpaceLatent:
        self._layout.check_style(ss)
        cot = np.asarray(cotangent, dtype=np.float64) * self._theta[None, None, :3]
        yaw, pitch = self._pose_of(ss)
        sc = rig.get_scene(yaw, pitch)
        grads = [np.zeros(rig.SS_WIDTH) for _ in range(rig.N_LAYERS)]
        # pattern channels: inner product with the (constant) jacobian column
        field_dots = np.einsum("hwc,phw,pc->p", cot, sc.fields, sc.colors)
        for ch in rig.PATTERN_CHANNELS:
            grads[ch.layer][ch.channel] = ch.gain * field_dots[rig.FIELD_INDEX[ch.field_key]]
        amps = rig.field_amps_from_ss(ss.channels)
        for name, which in (("pose_yaw", "yaw"), ("pose_pitch", "pitch")):
            ch = rig.CHANNEL_BY_NAME[name]
            col = sc.pose_partial(amps, which) * _POSE_RAD_PER_UNIT
            grads[ch.layer][ch.channel] = float(np.sum(cot * col))
        return StyleSpaceLatent(grads)

    def pose_edit_vjp(self, latent: WPlusLatent, cotangent: np.ndarray) -> tuple:
        ss = self.to_stylespace(latent)
        grads = self.generate_ss_vjp(ss, cotangent)
        # d ss / d yaw_deg: layer-0 column 0 of [I; B] scaled by 1/gain
        g0 = grads.channels[0]
        b0 = self._B[0]
        dyaw = (g0[0] + g0[rig.W_DIM :] @ b0[:, 0]) / rig.POSE_GAIN_DEG
        dpitch = (g0[1] + g0[rig.W_DIM :] @ b0[:, 1]) / rig.POSE_GAIN_DEG
        return float(dyaw), float(dpitch)

    # -- tail (post-style) parameters ----------------------------------------

    def tail_params(self) -> np.ndarray:
        return self._theta.copy()

    def set_tail_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.shape != (6,):
            raise ValidationError(f"toy tail expects 6 parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("non-finite tail parameters")
        self._theta = theta.copy()

    def tail_vjp(self, ss: StyleSpaceLatent, cotangent: np.ndarray) -> np.ndarray:
        self._layout.check_style(ss)
        cot = np.asarray(cotangent, dtype=np.float64)
        yaw, pitch = self._pose_of(ss)
        sc = rig.get_scene(yaw, pitch)
        raw = sc.render_inner(rig.field_amps_from_ss(ss.channels))
        dg = np.einsum("hwc,hwc->c", cot, raw)
        db = cot.sum(axis=(0, 1))
        return np.concatenate([dg, db])

    # -- sampling helpers (deterministic in the seed) -------------------------

    def sample_identity(self, seed: int) -> WPlusLatent:
        """Random identity: appearance channels only, deformations neutral."""
        rng = np.random.default_rng((self.seed, seed))
        values = {}
        for ch in rig.CHANNELS:
            if ch.kind == "skin":
                values[ch.name] = 0.9 * rng.standard_normal()
            elif ch.kind == "bg":
                values[ch.name] = 0.7 * rng.standard_normal()
            elif ch.kind == "identity":
                values[ch.name] = 1.2 * rng.standard_normal()
        return self.wplus_from_channel_values(values)

    def wplus_from_channel_values(self, values: dict) -> WPlusLatent:
        """Exact W+ for target values on named rig channels (all sit at c < 8)."""
        w = np.zeros((rig.N_LAYERS, rig.W_DIM))
        for name, val in values.items():
            ch = rig.CHANNEL_BY_NAME[name]
            if ch.channel >= rig.W_DIM:
                raise ValidationError(f"channel {name} is not independently reachable from W+")
            w[ch.layer, ch.channel] = float(val)
        return WPlusLatent(w)


class ToyInverter(InverterBackend):
    """Closed-form inversion into W+ for rig-domain images."""

    def __init__(self, backend: ToyBackend):
        self.backend = backend

    def _fit(self, image: np.ndarray) -> rig.RigFit:
        if np.asarray(image).shape != self.backend.image_shape:
            raise LayoutError(
                f"image shape {np.asarray(image).shape} != {self.backend.image_shape}"
            )
        theta = self.backend.tail_params()
        return rig.fit_image(image, fit_roll=False, tail_gain=theta[:3], tail_bias=theta[3:])

    def _wplus_from_fit(self, fit: rig.RigFit) -> WPlusLatent:
        B = self.backend._B
        w = np.zeros((rig.N_LAYERS, rig.W_DIM))
        for layer in range(rig.N_LAYERS):
            rows, vals = [], []
            if layer == 0:
                e0 = np.zeros(rig.W_DIM); e0[0] = 1.0
                e1 = np.zeros(rig.W_DIM); e1[1] = 1.0
                rows += [e0, e1]
                vals += [fit.yaw_deg / rig.POSE_GAIN_DEG, fit.pitch_deg / rig.POSE_GAIN_DEG]
            for key in rig.FIELD_KEYS:
                members = rig.FIELD_CHANNELS[key]
                if members[0].layer != layer:
                    continue
                row = np.zeros(rig.W_DIM)
                for ch in members:
                    if ch.channel < rig.W_DIM:
                        row[ch.channel] += 1.0
                    else:
                        row += B[layer][ch.channel - rig.W_DIM]
                rows.append(row)
                vals.append(fit.field_amps[rig.FIELD_INDEX[key]] / members[0].gain)
            if rows:
                sol, *_ = np.linalg.lstsq(np.stack(rows), np.asarray(vals), rcond=None)
                w[layer] = sol
        return WPlusLatent(w)

    def invert(self, image: np.ndarray) -> WPlusLatent:
        return self._wplus_from_fit(self._fit(image))

    def invert_with_info(self, image: np.ndarray):
        fit = self._fit(image)
        info = {
            "residual": fit.residual_rms,
            "out_of_domain": fit.residual_rms > rig.OUT_OF_DOMAIN_RMS,
        }
        return self._wplus_from_fit(fit), info


class PyramidPerceptual(PerceptualMetric):
    """Reference perceptual metric: masked 4-scale Laplacian-pyramid score."""

    def distance(self, a, b, mask=None) -> float:
        return pyramid_distance(a, b, mask)

    def distance_grad(self, a, b, mask=None):
        return pyramid_distance_grad(a, b, mask)


class ToyIdentityEmbedder(IdentityEmbedder):
    """Seeded random projection of the rigid (non-deformable) face region,
    measured as a deviation from the canonical neutral face, then normalized."""

    EMBED_DIM = 96
    _PROJ_SEED = 1717

    def __init__(self, backend: ToyBackend):
        self.backend = backend
        sc = rig.get_scene(0.0, 0.0)
        self._mask = sc.rigid_mask()
        self._ref = sc.render_inner(np.zeros(len(rig.FIELD_KEYS)))
        n = int(self._mask.sum()) * 3
        rng = np.random.default_rng(self._PROJ_SEED)
        self._P = rng.standard_normal((self.EMBED_DIM, n)) / math.sqrt(n)

    def _project(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.backend.image_shape:
            raise LayoutError(f"image shape {image.shape} != {self.backend.image_shape}")
        delta = (image - self._ref)[self._mask].reshape(-1)
        return self._P @ delta

    def embed(self, image: np.ndarray) -> np.ndarray:
        z = self._project(image)
        n = np.linalg.norm(z)
        if n < 1e-9:
            e = np.zeros(self.EMBED_DIM)
            e[0] = 1.0
            return e
        return z / n

    def embed_cos_vjp(self, image_a, image_b):
        za = self._project(image_a)
        zb = self._project(image_b)
        na, nb = np.linalg.norm(za), np.linalg.norm(zb)
        if na < 1e-9 or nb < 1e-9:
            return (1.0 if na < 1e-9 and nb < 1e-9 else 0.0), np.zeros(self.backend.image_shape)
        ea, eb = za / na, zb / nb
        cos = float(ea @ eb)
        dz = (eb - cos * ea) / na
        flat = self._P.T @ dz
        grad = np.zeros(self.backend.image_shape)
        grad[self._mask] = flat.reshape(-1, 3)
        return cos, grad


class ToyFaceParser(FaceParser):
    """Soft pixel classifier over the rig palette; smooth in the image."""

    PALETTE = np.array(
        [
            [142.0, 156.0, 170.0],  # background
            [206.0, 168.0, 148.0],  # skin
            [234.0, 150.0, 136.0],  # lips
            [244.0, 206.0, 188.0],  # eye white
            [106.0, 70.0, 58.0],    # pupil / dark features
            [159.0, 125.0, 110.0],  # brow / shading
        ]
    )
    SIGMA = 45.0

    def _scores(self, image):
        img = np.asarray(image, dtype=np.float64)
        d2 = ((img[:, :, None, :] - self.PALETTE[None, None, :, :]) ** 2).sum(axis=3)
        z = -d2 / (2.0 * self.SIGMA**2)
        z -= z.max(axis=2, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=2, keepdims=True)

    def parse(self, image: np.ndarray) -> np.ndarray:
        return self._scores(image)

    def parse_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        s = self._scores(img)
        cot = np.asarray(cotangent, dtype=np.float64)
        # dz_k/dp_c = -(p_c - mu_kc)/sigma^2 ; softmax backward
        dz = -(img[:, :, None, :] - self.PALETTE[None, None, :, :]) / self.SIGMA**2
        sc = s * cot
        term1 = np.einsum("hwk,hwkc->hwc", sc, dz)
        term2 = sc.sum(axis=2)[:, :, None] * np.einsum("hwk,hwkc->hwc", s, dz)
        return term1 - term2


class ToyLandmarkTracker(LandmarkTracker):
    """Analytic tracker: fits the rig (including roll) and reads landmarks,
    head pose, and blink state off the recovered parameters."""

    _CACHE_CAP = 256

    def __init__(self, backend: ToyBackend):
        self.backend = backend
        self._names = rig.landmark_names()
        self._cache: dict = {}
        self._last_fit: rig.RigFit | None = None

    def landmark_names(self) -> tuple:
        return self._names

    def _fit(self, image: np.ndarray) -> rig.RigFit:
        image = np.asarray(image, dtype=np.float64)
        key = hashlib.sha1(image.tobytes()).hexdigest()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        theta = self.backend.tail_params()
        fit = None
        if self._last_fit is not None:
            # warm start from the previous frame; sequences are near-continuous
            hint = (self._last_fit.yaw_deg, self._last_fit.pitch_deg, self._last_fit.roll_deg)
            fit = rig.fit_image(
                image, fit_roll=True, tail_gain=theta[:3], tail_bias=theta[3:], init_pose=hint
            )
            if fit.residual_rms > rig.OUT_OF_DOMAIN_RMS:
                fit = None
        if fit is None:
            fit = rig.fit_image(image, fit_roll=True, tail_gain=theta[:3], tail_bias=theta[3:])
        self._last_fit = fit
        if len(self._cache) >= self._CACHE_CAP:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = fit
        return fit

    def landmarks(self, image: np.ndarray) -> np.ndarray:
        fit = self._fit(image)
        o_l, o_r = fit.openness()
        pts = rig.canonical_landmarks(o_l, o_r)
        return rig.project_landmarks(pts, fit.yaw_deg, fit.pitch_deg, fit.roll_deg)

    def head_pose_estimate(self, image: np.ndarray) -> tuple:
        fit = self._fit(image)
        return (fit.yaw_deg, fit.pitch_deg, fit.roll_deg)

    def blink_score(self, image: np.ndarray) -> float:
        fit = self._fit(image)
        return 1.0 if min(fit.openness()) < rig.BLINK_OPENNESS else 0.0

    def face_present(self, image: np.ndarray) -> bool:
        return self._fit(image).residual_rms <= rig.OUT_OF_DOMAIN_RMS
