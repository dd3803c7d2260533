"""Weight-free adapter stubs for the real-model deployment path.

These document the tensor layouts the pipeline expects from a 1024x1024
style-based generator stack and fail loudly when used without weights.  The
shipped StyleSpace index preset (presets/stylegan2_indices.json) targets this
layout: 18 style layers of 512 channels each, indices (layer, channel) with
layer < 18 and channel < 512.

Wiring in real models means implementing each class against its checkpoint:
 * generator: synthesis network with style injection (W+ 18x512, image
   1024x1024x3 RGB in [0, 255]); pose_edit delegates to a flow-based latent
   editor conditioned on the latent.
 * inverter: an encoder mapping aligned 1024x1024 crops to W+.
 * perceptual metric: a learned patch-similarity network.
 * identity embedder: a face-recognition embedding, unit-normalized.
 * face parser: per-pixel class scores over face regions.
 * landmark tracker: an 81-point landmark model (68 + forehead extension).
"""

from __future__ import annotations

import numpy as np

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

STYLEGAN2_LAYOUT = LatentLayout(18, 512, (512,) * 18)
STYLEGAN2_IMAGE_SHAPE = (1024, 1024, 3)

_MSG = (
    "the stylegan2 backend is an interface stub: it declares layouts but ships "
    "no pretrained weights; plug in a checkpoint-backed implementation"
)


class StyleGAN2Backend(GeneratorBackend):
    def __init__(self, seed: int = 0):
        self.seed = seed

    @property
    def layout(self) -> LatentLayout:
        return STYLEGAN2_LAYOUT

    @property
    def image_shape(self) -> tuple:
        return STYLEGAN2_IMAGE_SHAPE

    def generate(self, latent):
        raise UsageError(_MSG)

    def to_stylespace(self, latent):
        raise UsageError(_MSG)

    def generate_ss(self, ss):
        raise UsageError(_MSG)

    def pose_edit(self, latent, yaw_deg, pitch_deg):
        raise UsageError(_MSG)

    def generate_ss_grad(self, ss, index):
        raise UsageError(_MSG)

    def generate_ss_vjp(self, ss, cotangent):
        raise UsageError(_MSG)

    def pose_edit_vjp(self, latent, cotangent):
        raise UsageError(_MSG)

    def tail_params(self) -> np.ndarray:
        raise UsageError(_MSG)

    def set_tail_params(self, theta):
        raise UsageError(_MSG)

    def tail_vjp(self, ss, cotangent):
        raise UsageError(_MSG)


class StyleGAN2Inverter(InverterBackend):
    def invert(self, image):
        raise UsageError(_MSG)


class StyleGAN2Perceptual(PerceptualMetric):
    def distance(self, a, b, mask=None):
        raise UsageError(_MSG)

    def distance_grad(self, a, b, mask=None):
        raise UsageError(_MSG)


class StyleGAN2IdentityEmbedder(IdentityEmbedder):
    def embed(self, image):
        raise UsageError(_MSG)

    def embed_cos_vjp(self, image_a, image_b):
        raise UsageError(_MSG)


class StyleGAN2FaceParser(FaceParser):
    def parse(self, image):
        raise UsageError(_MSG)

    def parse_vjp(self, image, cotangent):
        raise UsageError(_MSG)


class StyleGAN2LandmarkTracker(LandmarkTracker):
    def landmark_names(self):
        raise UsageError(_MSG)

    def landmarks(self, image):
        raise UsageError(_MSG)

    def head_pose_estimate(self, image):
        raise UsageError(_MSG)

    def blink_score(self, image):
        raise UsageError(_MSG)
