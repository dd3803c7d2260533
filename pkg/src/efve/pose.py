"""Stage 4: per-frame head-pose encoding.

Finds the (yaw, pitch) edit of the identity latent whose rendering matches
the frame's inverted rendering: perceptual distance over the face mask plus
L2 over the rigid-face mask (the non-rigid regions are excluded from the L2
term since they carry no 3-D rotation information).

The optimizer is momentum descent on central finite differences over the 2-D
pose space: robust when the pose edit is a black box.  Frames warm-start from
the previous solution; frame 1 starts from the tracker's estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .percep import masked_rms, masked_rms_grad

YAW_BOUNDS = (-45.0, 45.0)
PITCH_BOUNDS = (-30.0, 30.0)


@dataclass(frozen=True)
class PoseOptimConfig:
    fd_step_deg: float = 0.25
    momentum: float = 0.9
    initial_step_deg: float = 0.5
    min_step_deg: float = 0.01
    max_iterations: int = 200


@dataclass
class PoseSolution:
    yaw_deg: float
    pitch_deg: float
    loss_final: float
    iterations: int
    converged: bool
    latent: object  # pose-edited identity latent


def _clip_pose(yaw, pitch):
    return (
        float(np.clip(yaw, *YAW_BOUNDS)),
        float(np.clip(pitch, *PITCH_BOUNDS)),
    )


def pose_loss(candidate, l_id, target_img, masks, bundle) -> float:
    yaw, pitch = candidate
    render = bundle.generator.generate(bundle.generator.pose_edit(l_id, yaw, pitch))
    value = bundle.perceptual.distance(render, target_img, masks["face"])
    value += masked_rms(render, target_img, masks["rigid_face"])
    if not np.isfinite(value):
        raise NumericalError(f"non-finite pose loss at ({yaw}, {pitch})")
    return float(value)


def pose_loss_grad(candidate, l_id, target_img, masks, bundle):
    """Analytic gradient d loss / d (yaw, pitch) via the generator's chain."""
    yaw, pitch = candidate
    gen = bundle.generator
    edited = gen.pose_edit(l_id, yaw, pitch)
    ss = gen.to_stylespace(edited)
    render = gen.generate_ss(ss)
    v1, g1 = bundle.perceptual.distance_grad(render, target_img, masks["face"])
    v2, g2 = masked_rms_grad(render, target_img, masks["rigid_face"])
    dyaw, dpitch = gen.pose_edit_vjp(edited, g1 + g2)
    return float(v1 + v2), np.array([dyaw, dpitch])


def encode_pose(
    l_id,
    target_img,
    masks,
    init,
    bundle,
    config: PoseOptimConfig | None = None,
) -> PoseSolution:
    config = config or PoseOptimConfig()
    yaw, pitch = _clip_pose(*init)

    def f(y, p):
        return pose_loss((y, p), l_id, target_img, masks, bundle)

    cur = f(yaw, pitch)
    best = (cur, yaw, pitch)
    vel = np.zeros(2)
    lr = config.initial_step_deg
    h = config.fd_step_deg
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        g = np.array(
            [
                (f(yaw + h, pitch) - f(yaw - h, pitch)) / (2 * h),
                (f(yaw, pitch + h) - f(yaw, pitch - h)) / (2 * h),
            ]
        )
        norm = np.linalg.norm(g)
        if norm < 1e-12:
            converged = True
            break
        vel = config.momentum * vel - lr * g / norm
        cand = _clip_pose(yaw + vel[0], pitch + vel[1])
        step = float(np.hypot(cand[0] - yaw, cand[1] - pitch))
        cand_loss = f(*cand)
        if cand_loss <= cur:
            yaw, pitch = cand
            cur = cand_loss
            if cur < best[0]:
                best = (cur, yaw, pitch)
        else:
            lr *= 0.5
            vel[:] = 0.0
            step = 0.0
            if lr < config.min_step_deg:
                converged = True
                break
        if step and step < config.min_step_deg:
            converged = True
            break

    loss_final, yaw, pitch = best
    latent = bundle.generator.pose_edit(l_id, yaw, pitch)
    return PoseSolution(
        yaw_deg=yaw,
        pitch_deg=pitch,
        loss_final=loss_final,
        iterations=it,
        converged=converged,
        latent=latent,
    )


def encode_pose_sequence(l_id, id_pose_estimate, aligned_frames, targets, bundle,
                         config: PoseOptimConfig | None = None):
    """Sequential pose encoding with warm starts.

    ``id_pose_estimate`` is the tracker's (yaw, pitch, roll) on the identity
    frame; frame 1 initializes at the tracker-estimated delta to it.
    """
    solutions = []
    prev = None
    for af, target in zip(aligned_frames, targets):
        if prev is None:
            init = (
                af.pose_estimate[0] - id_pose_estimate[0],
                af.pose_estimate[1] - id_pose_estimate[1],
            )
        else:
            init = (prev.yaw_deg, prev.pitch_deg)
        sol = encode_pose(l_id, target, af.masks, init, bundle, config)
        solutions.append(sol)
        prev = sol
    return solutions


def pose_csv(solutions, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "yaw_deg", "pitch_deg", "loss", "iterations", "converged"])
        for t, s in enumerate(solutions):
            wr.writerow([t, f"{s.yaw_deg:.6f}", f"{s.pitch_deg:.6f}", f"{s.loss_final:.9g}",
                         s.iterations, int(s.converged)])
