"""Stage 5: per-frame optimization of the offset vector against the inverted
target rendering.

Per frame: the pose-adjusted latent is mapped to style space, its optimized
entries are initialized from the previous frame's style baseline (keeping
consecutive optima in the same latent neighborhood), the offsets start at
zero, and N epochs of adaptive-moment updates with per-index learning rates
follow.  Gradients for all attribute groups are computed jointly each epoch;
gaze indices are frozen on blink frames.  The returned offsets are the best
evaluated iterate, so the final loss never exceeds the initial one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .latent import AlphaVector, AttributeGroups, apply_offsets
from .losses import LossConfig, total_loss
from .optim import AdamWAmsgrad


@dataclass(frozen=True)
class FrameOptimConfig:
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_decay: float = 0.8
    lr_decay_every: int = 10
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValidationError("lr decay must be in (0, 1]")


@dataclass
class PrevState:
    """What frame t needs from frame t-1 (and frame 1)."""

    ss_entries: np.ndarray  # style baseline at the optimized indices, pre-offset
    alpha: np.ndarray
    s_hat_prev: np.ndarray
    s_prev: np.ndarray
    s_hat_first: np.ndarray


@dataclass
class FrameResult:
    alpha: AlphaVector
    loss_trace: list  # per-epoch breakdown dicts
    gaze_skipped: bool
    epochs_run: int
    initial_loss: float
    final_loss: float
    s_hat: np.ndarray
    ss_base_entries: np.ndarray  # the Eq-style baseline this frame used
    aborted: bool = False


def encode_frame(
    lh_t,
    prev: PrevState | None,
    s_t,
    groups: AttributeGroups,
    eta: np.ndarray,
    config: FrameOptimConfig,
    blink: bool,
    masks: dict,
    bundle,
) -> FrameResult:
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if len(eta) != len(groups):
        raise ValidationError(f"learning-rate vector covers {len(eta)} of {len(groups)} indices")

    gen = bundle.generator
    lh_ss = gen.to_stylespace(lh_t)
    if prev is not None:
        for k, ix in enumerate(groups.flat):
            lh_ss.channels[ix.layer][ix.channel] = prev.ss_entries[k]
    base_entries = np.array([lh_ss[ix] for ix in groups.flat])

    s_hat_prev = prev.s_hat_prev if prev is not None else None
    s_prev = prev.s_prev if prev is not None else None
    s_hat_first = prev.s_hat_first if prev is not None else None

    gaze_slice = groups.slice_of("gaze")
    alpha = np.zeros(len(groups))
    opt = AdamWAmsgrad(
        len(groups), config.beta1, config.beta2, config.eps, config.weight_decay
    )

    best_alpha = alpha.copy()
    best_loss = None
    initial_loss = None
    trace = []
    aborted = False
    epochs_run = 0

    for epoch in range(config.epochs):
        ss_cur = apply_offsets(lh_ss, groups, AlphaVector(alpha, groups))
        s_hat = gen.generate_ss(ss_cur)
        value, bd, d_img = total_loss(
            s_hat, s_t, s_hat_prev, s_prev, s_hat_first, masks, bundle,
            config.loss, want_grad=True,
        )
        trace.append(bd)
        epochs_run = epoch + 1
        if initial_loss is None:
            initial_loss = value
        if best_loss is None or value < best_loss:
            best_loss, best_alpha = value, alpha.copy()

        ss_grad = gen.generate_ss_vjp(ss_cur, d_img)
        g = np.array([ss_grad.channels[ix.layer][ix.channel] for ix in groups.flat])
        if blink:
            g[gaze_slice] = 0.0
        if not np.all(np.isfinite(g)):
            aborted = True
            break
        lr = eta * (config.lr_decay ** (epoch // config.lr_decay_every))
        alpha = opt.step(alpha, g, lr)

    # score the final iterate too (the loop evaluates before stepping)
    if not aborted:
        ss_cur = apply_offsets(lh_ss, groups, AlphaVector(alpha, groups))
        s_hat = gen.generate_ss(ss_cur)
        value, bd = total_loss(
            s_hat, s_t, s_hat_prev, s_prev, s_hat_first, masks, bundle, config.loss
        )
        if value < best_loss:
            best_loss, best_alpha = value, alpha.copy()

    final_alpha = AlphaVector(best_alpha, groups)
    s_hat_best = gen.generate_ss(apply_offsets(lh_ss, groups, final_alpha))
    if initial_loss is None:
        raise NumericalError("frame optimization produced no finite evaluation")
    return FrameResult(
        alpha=final_alpha,
        loss_trace=trace,
        gaze_skipped=bool(blink),
        epochs_run=epochs_run,
        initial_loss=float(initial_loss),
        final_loss=float(best_loss),
        s_hat=s_hat_best,
        ss_base_entries=base_entries,
        aborted=aborted,
    )


def encode_sequence(
    lh_list,
    target_list,
    groups: AttributeGroups,
    eta: np.ndarray,
    config: FrameOptimConfig,
    blinks,
    masks_list,
    bundle,
) -> list:
    """Frames in order, state threaded t-1 -> t; the first frame's final
    rendering is cached as the identity reference for the whole clip."""
    n = len(lh_list)
    if not (len(target_list) == len(blinks) == len(masks_list) == n):
        raise ValidationError("sequence inputs have mismatched lengths")
    results = []
    prev: PrevState | None = None
    s_hat_first = None
    for t in range(n):
        try:
            fr = encode_frame(
                lh_list[t], prev, target_list[t], groups, eta, config,
                bool(blinks[t]), masks_list[t], bundle,
            )
        except Exception as exc:
            raise NumericalError(f"attribute encoding failed at frame {t}: {exc}") from exc
        results.append(fr)
        if s_hat_first is None:
            s_hat_first = fr.s_hat
        prev = PrevState(
            ss_entries=fr.ss_base_entries,
            alpha=fr.alpha.values,
            s_hat_prev=fr.s_hat,
            s_prev=np.asarray(target_list[t], dtype=np.float64),
            s_hat_first=s_hat_first,
        )
    return results


def trace_to_csv(results, path) -> None:
    """Per-frame, per-epoch loss-term table for convergence plots."""
    import csv

    keys = None
    with open(path, "w", newline="") as fh:
        writer = None
        for t, fr in enumerate(results):
            for epoch, bd in enumerate(fr.loss_trace):
                if keys is None:
                    keys = sorted(bd.keys())
                    writer = csv.writer(fh)
                    writer.writerow(["frame", "epoch", *keys])
                writer.writerow([t, epoch, *[f"{bd[k]:.9g}" for k in keys]])
