"""Backend registry: bundles of the six model components, selected by name."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import UsageError
from .base import (
    FaceParser,
    GeneratorBackend,
    IdentityEmbedder,
    InverterBackend,
    LandmarkTracker,
    LatentLayout,
    PerceptualMetric,
)

BACKEND_NAMES = ("toy", "stylegan2")


@dataclass
class BackendBundle:
    name: str
    generator: GeneratorBackend
    inverter: InverterBackend
    perceptual: PerceptualMetric
    embedder: IdentityEmbedder
    parser: FaceParser
    tracker: LandmarkTracker


def get_bundle(name: str, seed: int = 0) -> BackendBundle:
    if name == "toy":
        from .toy import (
            PyramidPerceptual,
            ToyBackend,
            ToyFaceParser,
            ToyIdentityEmbedder,
            ToyInverter,
            ToyLandmarkTracker,
        )

        gen = ToyBackend(seed=seed)
        return BackendBundle(
            name="toy",
            generator=gen,
            inverter=ToyInverter(gen),
            perceptual=PyramidPerceptual(),
            embedder=ToyIdentityEmbedder(gen),
            parser=ToyFaceParser(),
            tracker=ToyLandmarkTracker(gen),
        )
    if name == "stylegan2":
        from .stylegan2 import (
            StyleGAN2Backend,
            StyleGAN2FaceParser,
            StyleGAN2IdentityEmbedder,
            StyleGAN2Inverter,
            StyleGAN2LandmarkTracker,
            StyleGAN2Perceptual,
        )

        return BackendBundle(
            name="stylegan2",
            generator=StyleGAN2Backend(seed=seed),
            inverter=StyleGAN2Inverter(),
            perceptual=StyleGAN2Perceptual(),
            embedder=StyleGAN2IdentityEmbedder(),
            parser=StyleGAN2FaceParser(),
            tracker=StyleGAN2LandmarkTracker(),
        )
    raise UsageError(f"unknown backend {name!r}; choose from {BACKEND_NAMES}")


__all__ = [
    "BACKEND_NAMES",
    "BackendBundle",
    "FaceParser",
    "GeneratorBackend",
    "IdentityEmbedder",
    "InverterBackend",
    "LandmarkTracker",
    "LatentLayout",
    "PerceptualMetric",
    "get_bundle",
]
