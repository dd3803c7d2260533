"""Style-channel discovery and per-index learning rates.

Index sensitivity is a forward probe: perturb one style channel over a delta
grid, render, and average the masked perceptual change per unit delta over
consecutive grid pairs.  Channels are selected for an attribute when they
score high inside the attribute's mask and (by default) near zero over the
complement region (face minus mask) - probing the whole face instead is
available via ``complement_mode="whole_face"``.  The per-index learning rate
is exp(-1.5 * score / group max), damping dominant channels.

The non-uniqueness probe optimizes a counter-offset that restores the image
after a style perturbation and reports how far the latent itself is from
cancelling: image-space recovery does not imply latent-space recovery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .latent import GROUP_ORDER, AlphaVector, AttributeGroups, StyleIndex, apply_offsets
from .optim import AdamWAmsgrad
from .percep import masked_rms_grad


@dataclass(frozen=True)
class SelectionThresholds:
    quantile: float = 0.8
    complement_frac: float = 0.05  # tau, as a fraction of the group's max score
    complement_mode: str = "complement"  # or "whole_face"

    def __post_init__(self):
        if not (0.0 <= self.quantile < 1.0):
            raise ValidationError("quantile must be in [0, 1)")
        if self.complement_mode not in ("complement", "whole_face"):
            raise ValidationError(f"unknown complement mode {self.complement_mode!r}")


DEFAULT_DELTAS = tuple(float(x) for x in range(-5, 6))  # -5..5, 10 pairs


@dataclass
class SensitivityReport:
    deltas: tuple
    attributes: tuple
    candidates: tuple  # (layer, channel) pairs probed
    gammas: dict  # (attr, (l, c)) -> score
    complements: dict  # (attr, (l, c)) -> score outside the attribute mask
    seed: int = 0
    complement_mode: str = "complement"

    def gamma(self, attr, index) -> float:
        key = (attr, tuple(index))
        return self.gammas[key]

    def to_json_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "attributes": list(self.attributes),
            "candidates": [list(c) for c in self.candidates],
            "seed": self.seed,
            "complement_mode": self.complement_mode,
            "gammas": {f"{a}:{l}:{c}": v for (a, (l, c)), v in self.gammas.items()},
            "complements": {f"{a}:{l}:{c}": v for (a, (l, c)), v in self.complements.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SensitivityReport":
        def unkey(s):
            a, l, c = s.rsplit(":", 2)
            return (a, (int(l), int(c)))

        return cls(
            deltas=tuple(d["deltas"]),
            attributes=tuple(d["attributes"]),
            candidates=tuple(tuple(c) for c in d["candidates"]),
            gammas={unkey(k): v for k, v in d["gammas"].items()},
            complements={unkey(k): v for k, v in d["complements"].items()},
            seed=d.get("seed", 0),
            complement_mode=d.get("complement_mode", "complement"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


def _check_deltas(deltas):
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2:
        raise ValidationError("need at least 2 deltas")
    for a, b in zip(deltas, deltas[1:]):
        if a == b:
            raise ValidationError("duplicate consecutive deltas give a zero denominator")
    return deltas


def index_sensitivity(bundle, ss_base, index, mask, deltas=DEFAULT_DELTAS) -> float:
    """Mean masked perceptual change per unit delta over consecutive pairs."""
    deltas = _check_deltas(deltas)
    m = np.asarray(mask)
    if not m.any():
        raise ValidationError("empty sensitivity mask")
    ix = index if isinstance(index, StyleIndex) else StyleIndex(*index)
    renders = []
    for d in deltas:
        ss = ss_base.copy()
        ss.check_index(ix)
        ss.channels[ix.layer][ix.channel] += d
        renders.append(bundle.generator.generate_ss(ss))
    total = 0.0
    for k in range(1, len(deltas)):
        dist = bundle.perceptual.distance(renders[k], renders[k - 1], m)
        total += dist / abs(deltas[k] - deltas[k - 1])
    return total / (len(deltas) - 1)


def analyze_indices(
    bundle,
    l_id,
    attribute_masks: dict,
    face_mask,
    deltas=DEFAULT_DELTAS,
    candidates=None,
    seed: int = 0,
    complement_mode: str = "complement",
    jobs: int = 1,
) -> SensitivityReport:
    """Probe every candidate channel against every attribute mask.

    Renders are shared across attributes: one render per (index, delta), then
    one masked distance per (attribute, pair) plus one for the complement
    region.
    """
    deltas = _check_deltas(deltas)
    gen = bundle.generator
    ss_base = gen.to_stylespace(l_id)
    if candidates is None:
        candidates = [
            (l, c) for l, w in enumerate(ss_base.widths) for c in range(w)
        ]
    attrs = tuple(attribute_masks.keys())
    face = np.asarray(face_mask, dtype=bool)
    comp_masks = {}
    for a in attrs:
        m = np.asarray(attribute_masks[a], dtype=bool)
        comp_masks[a] = face if complement_mode == "whole_face" else (face & ~m)

    gammas: dict = {}
    complements: dict = {}

    def probe(lc):
        ix = StyleIndex(*lc)
        renders = []
        for d in deltas:
            ss = ss_base.copy()
            ss.channels[ix.layer][ix.channel] += d
            renders.append(gen.generate_ss(ss))
        out_g = {a: 0.0 for a in attrs}
        out_c = {a: 0.0 for a in attrs}
        for k in range(1, len(deltas)):
            a_img, b_img = renders[k], renders[k - 1]
            if np.array_equal(a_img, b_img):
                continue
            step = abs(deltas[k] - deltas[k - 1])
            for a in attrs:
                out_g[a] += bundle.perceptual.distance(a_img, b_img, attribute_masks[a]) / step
                out_c[a] += bundle.perceptual.distance(a_img, b_img, comp_masks[a]) / step
        n = len(deltas) - 1
        return lc, {a: v / n for a, v in out_g.items()}, {a: v / n for a, v in out_c.items()}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(probe, candidates))
    else:
        results = [probe(lc) for lc in candidates]
    for lc, g, c in results:  # merged in candidate order: deterministic
        for a in attrs:
            gammas[(a, tuple(lc))] = g[a]
            complements[(a, tuple(lc))] = c[a]

    return SensitivityReport(
        deltas=tuple(deltas),
        attributes=attrs,
        candidates=tuple(tuple(lc) for lc in candidates),
        gammas=gammas,
        complements=complements,
        seed=seed,
        complement_mode=complement_mode,
    )


def select_indices(reports, thresholds: SelectionThresholds | None = None) -> AttributeGroups:
    """Intersect per-subject selections into attribute groups.

    Within each report and attribute: keep channels scoring at or above the
    quantile of all probed scores, strictly positive (dead channels score an
    exact 0 on both tests and would otherwise slip through), with complement
    score at most tau = complement_frac * group max.
    """
    thresholds = thresholds or SelectionThresholds()
    if not reports:
        raise ValidationError("no sensitivity reports given")
    per_subject = []
    for rep in reports:
        chosen = {}
        for a in rep.attributes:
            scores = np.array([rep.gammas[(a, c)] for c in rep.candidates])
            comps = np.array([rep.complements[(a, c)] for c in rep.candidates])
            q = float(np.quantile(scores, thresholds.quantile))
            gmax = float(scores.max())
            tau = thresholds.complement_frac * gmax
            keep = (scores > 0.0) & (scores >= q) & (comps <= tau)
            chosen[a] = {c for c, k in zip(rep.candidates, keep) if k}
        per_subject.append(chosen)

    groups = {}
    diag = {}
    for a in reports[0].attributes:
        sel = set.intersection(*[s[a] for s in per_subject])
        diag[a] = sorted(sel)
        if not sel:
            raise ValidationError(
                f"no stable indices selected for attribute {a!r}; "
                f"per-subject counts: {[len(s[a]) for s in per_subject]}"
            )
        groups[a] = sorted(sel)
    order = [a for a in GROUP_ORDER if a in groups]
    return AttributeGroups({a: groups[a] for a in order})


@dataclass
class LearningRates:
    eta: np.ndarray  # aligned to groups.flat
    groups: AttributeGroups = field(repr=False)

    def as_vector(self) -> np.ndarray:
        return self.eta.copy()


def learning_rates(report: SensitivityReport, groups: AttributeGroups) -> LearningRates:
    """eta = exp(-1.5 * score / group max); a zero-max group gets all ones."""
    eta = np.ones(len(groups))
    for name, members in groups.groups.items():
        if not members:
            continue
        scores = []
        for ix in members:
            key = (name, ix.as_tuple())
            if key not in report.gammas:
                raise ValidationError(f"report lacks a score for {name}:{ix.as_tuple()}")
            scores.append(report.gammas[key])
        gmax = max(scores)
        sl = groups.slice_of(name)
        if gmax <= 0.0:
            eta[sl] = 1.0
            continue
        eta[sl] = np.exp(-1.5 * np.asarray(scores) / gmax)
    return LearningRates(eta=eta, groups=groups)


def nonuniqueness_probe(
    bundle,
    lh_ss,
    alpha: AlphaVector,
    iters: int = 150,
    lr: float = 0.05,
):
    """Optimize a counter-offset restoring the unperturbed rendering.

    Returns (alpha_inv, residual_latent_norm, residual_image_loss) where the
    latent norm is ||alpha + alpha_inv||_2.  Demonstrates that image-space
    recovery does not force latent-space cancellation when channels are
    redundant.
    """
    groups = alpha.groups
    gen = bundle.generator
    reference = gen.generate_ss(lh_ss)
    ones = np.ones(reference.shape[:2], dtype=bool)

    def loss_and_grad(a_inv):
        total = AlphaVector(alpha.values + a_inv, groups)
        ss = apply_offsets(lh_ss, groups, total)
        img = gen.generate_ss(ss)
        v1, g1 = bundle.perceptual.distance_grad(img, reference, ones)
        v2, g2 = masked_rms_grad(img, reference, ones)
        ss_grad = gen.generate_ss_vjp(ss, g1 + g2)
        g = np.array([ss_grad.channels[ix.layer][ix.channel] for ix in groups.flat])
        return v1 + v2, g

    a_inv = np.zeros(len(groups))
    opt = AdamWAmsgrad(len(groups))
    best = (math.inf, a_inv.copy())
    for _ in range(iters):
        val, g = loss_and_grad(a_inv)
        if val < best[0]:
            best = (val, a_inv.copy())
        a_inv = opt.step(a_inv, g, lr)
    val, _ = loss_and_grad(a_inv)
    if val < best[0]:
        best = (val, a_inv.copy())
    image_loss, a_inv = best
    latent_norm = float(np.linalg.norm(alpha.values + a_inv))
    return AlphaVector(a_inv, groups), latent_norm, float(image_loss)
