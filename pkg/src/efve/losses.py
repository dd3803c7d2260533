"""The frame-optimization loss stack and its gradient with respect to the
rendered frame.

Five additive terms: mouth+chin region (perceptual + L2 + inter-frame),
eyes+brows region (same), pupil region (L2 + inter-frame L2 only; the
perceptual score tolerates small spatial shifts and would let gaze jitter),
identity regularization against the first rendered frame, and a face-parsing
consistency term over the face mask.

The inter-frame terms are frame-difference-matching: for a loss kind ``f``,
IF_f compares f(S_t, S_t-1) against f(S_hat_t, S_hat_t-1).  The raw signed
difference (``interframe_abs=False``) can be negative and is minimized by
driving the rendered difference UP, which has no stable optimum when both
sides use the same metric; the default therefore penalizes a smoothed
absolute difference, which is still exactly zero whenever the rendered
inter-frame difference equals the target one.  At t=1 all inter-frame terms
are zero and the identity term compares the frame with itself (also zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .percep import masked_rms, masked_rms_grad, pyramid_distance, pyramid_distance_grad


@dataclass(frozen=True)
class LossWeights:
    mouth: float = 1.0
    eyes: float = 1.0
    pupil: float = 1.0
    identity: float = 1.0
    parsing: float = 1.0


@dataclass(frozen=True)
class LossConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    interframe_abs: bool = True


_FP_EPS = 1e-6
_IF_EPS = 1e-3


def _fp_term(parser, s_hat, s_t, face_mask, want_grad):
    p_hat = parser.parse(s_hat)
    p_t = parser.parse(s_t)
    m = face_mask.astype(np.float64)[:, :, None]
    d = (p_hat - p_t) * m
    root = np.sqrt(np.sum(d * d) + _FP_EPS * _FP_EPS)
    val = float(root - _FP_EPS)
    if not want_grad:
        return val, None
    return val, parser.parse_vjp(s_hat, d / root)


def _interframe(metric_fn, grad_fn, s_t, s_prev, s_hat, s_hat_prev, mask, abs_mode, want_grad):
    ref = metric_fn(s_t, s_prev, mask)
    if want_grad:
        cur, g = grad_fn(s_hat, s_hat_prev, mask)
    else:
        cur, g = metric_fn(s_hat, s_hat_prev, mask), None
    x = ref - cur
    if not abs_mode:
        return x, (None if g is None else -g)
    root = np.sqrt(x * x + _IF_EPS * _IF_EPS)
    val = root - _IF_EPS
    if g is None:
        return val, None
    return val, (-(x / root)) * g


def total_loss(
    s_hat_t,
    s_t,
    s_hat_prev,
    s_prev,
    s_hat_first,
    masks,
    bundle,
    config: LossConfig | None = None,
    want_grad: bool = False,
):
    """Returns (total, breakdown dict) or (total, breakdown, d total / d s_hat_t)."""
    config = config or LossConfig()
    w = config.weights
    s_hat_t = np.asarray(s_hat_t, dtype=np.float64)
    s_t = np.asarray(s_t, dtype=np.float64)
    if s_hat_t.shape != s_t.shape:
        raise ValidationError(f"image shapes differ: {s_hat_t.shape} vs {s_t.shape}")
    have_prev = s_hat_prev is not None and s_prev is not None

    grad = np.zeros_like(s_hat_t) if want_grad else None
    bd = {}

    def add(term, weight, value, g):
        bd[term] = float(value)
        if want_grad and g is not None:
            np.add(grad, weight * g, out=grad)

    # region terms: (name, mask, with perceptual?)
    regions = (
        ("mouth", masks["mouth_chin"], True, w.mouth),
        ("eyes", masks["eyes_brows"], True, w.eyes),
        ("pupil", masks["pupil"], False, w.pupil),
    )
    for name, mask, with_percep, weight in regions:
        if with_percep:
            if want_grad:
                v, g = pyramid_distance_grad(s_hat_t, s_t, mask)
            else:
                v, g = pyramid_distance(s_hat_t, s_t, mask), None
            add(f"{name}_lpips", weight, v, g)
        if want_grad:
            v, g = masked_rms_grad(s_hat_t, s_t, mask)
        else:
            v, g = masked_rms(s_hat_t, s_t, mask), None
        add(f"{name}_l2", weight, v, g)

        if have_prev:
            v, g = _interframe(
                masked_rms, masked_rms_grad, s_t, s_prev, s_hat_t, s_hat_prev, mask,
                config.interframe_abs, want_grad,
            )
            add(f"{name}_if_l2", weight, v, g)
            if with_percep:
                v, g = _interframe(
                    pyramid_distance, pyramid_distance_grad, s_t, s_prev, s_hat_t,
                    s_hat_prev, mask, config.interframe_abs, want_grad,
                )
                add(f"{name}_if_lpips", weight, v, g)
        else:
            bd[f"{name}_if_l2"] = 0.0
            if with_percep:
                bd[f"{name}_if_lpips"] = 0.0

    if s_hat_first is not None:
        if want_grad:
            cos, g = bundle.embedder.embed_cos_vjp(s_hat_t, s_hat_first)
            add("id", w.identity, 1.0 - cos, -g)
        else:
            ea = bundle.embedder.embed(s_hat_t)
            eb = bundle.embedder.embed(s_hat_first)
            bd["id"] = float(1.0 - ea @ eb)
    else:
        bd["id"] = 0.0

    v, g = _fp_term(bundle.parser, s_hat_t, s_t, masks["face"], want_grad)
    add("fp", w.parsing, v, g)

    bd["L_m"] = sum(bd[k] for k in bd if k.startswith("mouth_"))
    bd["L_e"] = sum(bd[k] for k in bd if k.startswith("eyes_"))
    bd["L_p"] = sum(bd[k] for k in bd if k.startswith("pupil_"))
    bd["L_ID"] = bd["id"]
    bd["L_FP"] = bd["fp"]
    total = (
        w.mouth * bd["L_m"]
        + w.eyes * bd["L_e"]
        + w.pupil * bd["L_p"]
        + w.identity * bd["L_ID"]
        + w.parsing * bd["L_FP"]
    )
    bd["total"] = float(total)
    if want_grad:
        return float(total), bd, grad
    return float(total), bd
