"""Stages 2-3: per-frame inversion and ID-latent selection.

Every aligned frame is inverted to a latent; the identity anchor is the
non-blink, near-frontal frame whose re-rendering best matches the original
(highest identity-embedding cosine).  Ties break to the earliest frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class IdSelectPolicy:
    frontal_bound_deg: float = 10.0
    relax_step_deg: float = 5.0


@dataclass
class InversionTrace:
    latents: list
    similarities: np.ndarray  # cosine(embed(frame), embed(render)) per frame
    poses: np.ndarray  # tracker (yaw, pitch, roll) per frame
    blinks: np.ndarray
    residuals: np.ndarray
    out_of_domain: np.ndarray

    def __post_init__(self):
        n = len(self.latents)
        for name in ("similarities", "poses", "blinks", "residuals", "out_of_domain"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"trace field {name} length != {n}")

    def __len__(self):
        return len(self.latents)


def invert_sequence(aligned_frames, bundle) -> InversionTrace:
    latents, sims, poses, blinks, resids, flags = [], [], [], [], [], []
    for af in aligned_frames:
        latent, info = bundle.inverter.invert_with_info(af.image)
        render = bundle.generator.generate(latent)
        e_real = bundle.embedder.embed(af.image)
        e_syn = bundle.embedder.embed(render)
        latents.append(latent)
        sims.append(float(np.clip(e_real @ e_syn, -1.0, 1.0)))
        poses.append(af.pose_estimate)
        blinks.append(af.blink)
        resids.append(info.get("residual", float("nan")))
        flags.append(bool(info.get("out_of_domain", False)))
    return InversionTrace(
        latents=latents,
        similarities=np.asarray(sims),
        poses=np.asarray(poses, dtype=np.float64),
        blinks=np.asarray(blinks, dtype=np.float64),
        residuals=np.asarray(resids, dtype=np.float64),
        out_of_domain=np.asarray(flags, dtype=bool),
    )


def select_id_latent(trace: InversionTrace, policy: IdSelectPolicy | None = None):
    """Returns (frame index, latent, report dict)."""
    policy = policy or IdSelectPolicy()
    if len(trace) == 0:
        raise ValidationError("empty inversion trace")
    non_blink = trace.blinks <= 0.5
    if not non_blink.any():
        raise ValidationError("every frame blinks: clip is unencodable")

    bound = policy.frontal_bound_deg
    relaxed = 0
    while True:
        frontal = (np.abs(trace.poses[:, 0]) <= bound) & (np.abs(trace.poses[:, 1]) <= bound)
        eligible = frontal & non_blink
        if eligible.any():
            break
        bound += policy.relax_step_deg
        relaxed += 1

    sims = np.where(eligible, trace.similarities, -np.inf)
    best = int(np.argmax(sims))  # argmax takes the earliest maximizer
    report = {
        "chosen_frame": best,
        "similarity": float(trace.similarities[best]),
        "pose_bound_deg": bound,
        "relaxation_steps": relaxed,
        "similarities": [float(s) for s in trace.similarities],
        "blinks": [float(b) for b in trace.blinks],
        "poses": [[float(x) for x in p] for p in trace.poses],
    }
    return best, trace.latents[best], report
