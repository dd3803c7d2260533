"""Encoder/decoder configuration: a JSON-serializable tree of every knob the
pipeline uses, with defaults matching the documented method constants.

Attribute groups come from one of three sources, in priority order: an
explicit ``groups`` table in the config, a named preset (``toy_default`` or
``stylegan2``), or index discovery at encode time (toy backend only).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

from .attrenc import FrameOptimConfig
from .errors import UsageError, ValidationError
from .idselect import IdSelectPolicy
from .latent import AttributeGroups
from .losses import LossConfig, LossWeights
from .pose import PoseOptimConfig
from .preproc import KeyFramePolicy
from .render import FinetuneConfig
from .ssanalysis import DEFAULT_DELTAS, SelectionThresholds

PRESET_NAMES = ("toy_default", "stylegan2")


@dataclass
class EncoderConfig:
    backend: str = "toy"
    seed: int = 0
    fps: float = 30.0
    quant: str = "f16"  # or "f32" (debug)
    groups_preset: str = "toy_default"
    groups: dict | None = None  # explicit table overrides the preset
    delta_grid: tuple = DEFAULT_DELTAS
    selection: SelectionThresholds = field(default_factory=SelectionThresholds)
    keyframe: KeyFramePolicy = field(default_factory=KeyFramePolicy)
    id_select: IdSelectPolicy = field(default_factory=IdSelectPolicy)
    pose: PoseOptimConfig = field(default_factory=PoseOptimConfig)
    frame: FrameOptimConfig = field(default_factory=FrameOptimConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def resolve_groups(self) -> AttributeGroups:
        if self.groups is not None:
            return AttributeGroups.from_dict(self.groups)
        return load_preset_groups(self.groups_preset)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["delta_grid"] = list(self.delta_grid)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        known = {
            "selection": SelectionThresholds,
            "keyframe": KeyFramePolicy,
            "id_select": IdSelectPolicy,
            "pose": PoseOptimConfig,
            "finetune": FinetuneConfig,
        }
        kwargs = {}
        for key, val in d.items():
            if key in known:
                kwargs[key] = known[key](**val)
            elif key == "frame":
                val = dict(val)
                loss = val.pop("loss", None)
                if loss is not None:
                    weights = loss.pop("weights", None)
                    loss_cfg = LossConfig(
                        weights=LossWeights(**weights) if weights else LossWeights(),
                        **loss,
                    )
                    val["loss"] = loss_cfg
                kwargs["frame"] = FrameOptimConfig(**val)
            elif key == "delta_grid":
                kwargs[key] = tuple(float(x) for x in val)
            else:
                kwargs[key] = val
        cfg = cls(**kwargs)
        if cfg.quant not in ("f16", "f32"):
            raise ValidationError(f"quant must be f16 or f32, got {cfg.quant!r}")
        return cfg


def load_preset_groups(name: str) -> AttributeGroups:
    if name == "toy_default":
        from .backends import toy_rig

        return AttributeGroups.from_dict(toy_rig.DEFAULT_GROUPS)
    if name == "stylegan2":
        raw = resources.files("efve.presets").joinpath("stylegan2_indices.json").read_text()
        return AttributeGroups.from_dict(json.loads(raw)["groups"])
    raise UsageError(f"unknown groups preset {name!r}; choose from {PRESET_NAMES}")


def load_config(path=None) -> EncoderConfig:
    if path is None:
        return EncoderConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}")
    try:
        return EncoderConfig.from_json_dict(data)
    except TypeError as exc:
        raise ValidationError(f"bad config field: {exc}")


def save_config(cfg: EncoderConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json_dict(), fh, indent=1, sort_keys=True)
