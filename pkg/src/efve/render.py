"""Stage 6: decoding, sequence-level tail fine-tuning, and puppeteering.

Decode per frame: pose-edit the identity latent, map to style space, replay
the encoder's style-baseline recursion (frames after the first reuse frame
one's entries at the optimized indices, exactly as the encoder initialized
them), add the offsets, synthesize, then re-apply the recorded roll about the
clip's stored rotation center.

Fine-tuning touches only the generator's post-style (tail) parameters with
all style latents and offsets held fixed as pivots, jointly over the whole
sequence; the bitstream is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgops
from .errors import ValidationError
from .latent import AlphaVector, AttributeGroups, apply_offsets
from .optim import AdamWAmsgrad
from .percep import masked_rms, masked_rms_grad


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 50
    learning_rate: float = 1e-3


def _frame_ss(generator, l_id, yaw, pitch, groups, base_entries):
    ss = generator.to_stylespace(generator.pose_edit(l_id, yaw, pitch))
    if base_entries is not None:
        for k, ix in enumerate(groups.flat):
            ss.channels[ix.layer][ix.channel] = base_entries[k]
    return ss


def render_frame(l_id, frame_params, groups: AttributeGroups, bundle, roll_center=None,
                 base_entries=None, apply_roll: bool = True):
    """Synthesize one frame from its 35 parameters.

    ``frame_params`` is (yaw, pitch, roll, alpha[...]); ``base_entries``
    carries the frame-one style baseline when decoding a sequence.
    """
    p = np.asarray(frame_params, dtype=np.float64).reshape(-1)
    if len(p) != 3 + len(groups):
        raise ValidationError(f"expected {3 + len(groups)} parameters, got {len(p)}")
    yaw, pitch, roll = p[0], p[1], p[2]
    alpha = AlphaVector(p[3:], groups)
    ss = _frame_ss(bundle.generator, l_id, yaw, pitch, groups, base_entries)
    img = bundle.generator.generate_ss(apply_offsets(ss, groups, alpha))
    if apply_roll and abs(roll) > 1e-12:
        if roll_center is None:
            h, w = img.shape[:2]
            roll_center = ((w - 1) / 2.0, (h - 1) / 2.0)
        img = imgops.rotate_image(img, roll, roll_center)
    return img


def decode_sequence(l_id, frames_params, groups: AttributeGroups, bundle, roll_center=None,
                    apply_roll: bool = True):
    """Decode all frames; pure function of (parameters, backend, tail state)."""
    frames_params = np.asarray(frames_params, dtype=np.float64)
    out = []
    base_entries = None
    for t in range(frames_params.shape[0]):
        yaw, pitch = frames_params[t, 0], frames_params[t, 1]
        if t == 0:
            ss1 = bundle.generator.to_stylespace(
                bundle.generator.pose_edit(l_id, yaw, pitch)
            )
            base_entries = np.array([ss1[ix] for ix in groups.flat])
        out.append(
            render_frame(
                l_id, frames_params[t], groups, bundle, roll_center,
                base_entries=base_entries, apply_roll=apply_roll,
            )
        )
    return out


def pivots_for_finetune(l_id, frames_params, groups, bundle):
    """Frozen per-frame style latents (baseline + offsets applied)."""
    frames_params = np.asarray(frames_params, dtype=np.float64)
    pivots = []
    base_entries = None
    for t in range(frames_params.shape[0]):
        yaw, pitch = frames_params[t, 0], frames_params[t, 1]
        ss = _frame_ss(bundle.generator, l_id, yaw, pitch, groups, base_entries)
        if t == 0:
            base_entries = np.array([ss[ix] for ix in groups.flat])
        alpha = AlphaVector(frames_params[t, 3:], groups)
        pivots.append(apply_offsets(ss, groups, alpha))
    return pivots


def finetune_tail(pivots, real_frames, face_masks, bundle, config: FinetuneConfig | None = None):
    """Optimize the tail parameters against real frames over the full sequence.

    Returns (theta, report).  The backend is left holding the best theta; on
    divergence the best epoch's parameters win.  Pivots are never modified.
    """
    config = config or FinetuneConfig()
    if len(pivots) < 1:
        raise ValidationError("need at least one frame to fine-tune")
    if not (len(pivots) == len(real_frames) == len(face_masks)):
        raise ValidationError("finetune inputs have mismatched lengths")
    gen = bundle.generator
    theta0 = gen.tail_params()
    theta = theta0.copy()

    def sequence_loss_grad(th):
        gen.set_tail_params(th)
        total = 0.0
        grad = np.zeros_like(th)
        for ss, real, mask in zip(pivots, real_frames, face_masks):
            img = gen.generate_ss(ss)
            v1, g1 = bundle.perceptual.distance_grad(img, real, mask)
            v2, g2 = masked_rms_grad(img, real, mask)
            total += v1 + v2
            grad += gen.tail_vjp(ss, g1 + g2)
        return total, grad

    losses = []
    initial, _ = sequence_loss_grad(theta)
    best = (initial, theta.copy())
    opt = AdamWAmsgrad(len(theta))
    for _ in range(config.epochs):
        val, g = sequence_loss_grad(theta)
        losses.append(float(val))
        if not np.all(np.isfinite(g)):
            break
        if val < best[0]:
            best = (val, theta.copy())
        theta = opt.step(theta, g, config.learning_rate)
    final_val, _ = sequence_loss_grad(theta)
    if final_val < best[0]:
        best = (final_val, theta.copy())
    gen.set_tail_params(best[1])
    report = {
        "initial_loss": float(initial),
        "final_loss": float(best[0]),
        "epochs": config.epochs,
        "loss_curve": losses,
    }
    return best[1], report


def puppeteer(l_id_puppet, frames_params, groups: AttributeGroups, bundle, roll_center=None,
              apply_roll: bool = True):
    """Drive a different identity with the clip's parameters, untouched."""
    return decode_sequence(
        l_id_puppet, frames_params, groups, bundle, roll_center, apply_roll=apply_roll
    )
