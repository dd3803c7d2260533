"""Abstract interfaces for the pluggable model components.

Real deployments plug in a style-based generator, an encoder-style inverter,
a learned perceptual metric, a face-identity embedder, a face parser, and a
landmark tracker.  The package ships working analytic implementations of all
six (the toy backend) and weight-free interface stubs for the real models.

Images everywhere are float64 RGB arrays of shape (H, W, 3) in [0, 255].
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from ..errors import LayoutError
from ..latent import StyleSpaceLatent, WPlusLatent


@dataclass(frozen=True)
class LatentLayout:
    """Declared shapes of the W+ and style spaces."""

    n_layers: int
    dim_per_layer: int
    style_widths: tuple

    def check_wplus(self, latent: WPlusLatent) -> None:
        if (latent.n_layers, latent.dim_per_layer) != (self.n_layers, self.dim_per_layer):
            raise LayoutError(
                f"W+ shape {(latent.n_layers, latent.dim_per_layer)} does not match "
                f"backend layout {(self.n_layers, self.dim_per_layer)}"
            )

    def check_style(self, ss: StyleSpaceLatent) -> None:
        if ss.widths != tuple(self.style_widths):
            raise LayoutError(
                f"style widths {ss.widths} do not match backend layout {tuple(self.style_widths)}"
            )


class GeneratorBackend(abc.ABC):
    """Differentiable generator with a style-space injection point.

    Contract (verified by the shared backend contract tests):
    generate_ss(to_stylespace(L)) == generate(L) pixelwise to 1e-6,
    pose_edit(L, 0, 0) == L, and generate_ss is differentiable in every style
    entry and in the tail parameters.
    """

    @property
    @abc.abstractmethod
    def layout(self) -> LatentLayout: ...

    @property
    @abc.abstractmethod
    def image_shape(self) -> tuple: ...

    @abc.abstractmethod
    def generate(self, latent: WPlusLatent) -> np.ndarray: ...

    @abc.abstractmethod
    def to_stylespace(self, latent: WPlusLatent) -> StyleSpaceLatent: ...

    @abc.abstractmethod
    def generate_ss(self, ss: StyleSpaceLatent) -> np.ndarray: ...

    @abc.abstractmethod
    def pose_edit(self, latent: WPlusLatent, yaw_deg: float, pitch_deg: float) -> WPlusLatent:
        """Return a new latent whose rendering is rotated by (yaw, pitch) degrees."""

    @abc.abstractmethod
    def generate_ss_grad(self, ss: StyleSpaceLatent, index) -> np.ndarray:
        """Jacobian column: d image / d ss[index], as an (H, W, 3) array."""

    @abc.abstractmethod
    def generate_ss_vjp(self, ss: StyleSpaceLatent, cotangent: np.ndarray) -> StyleSpaceLatent:
        """Pull an image cotangent back to style space (entries are gradients)."""

    @abc.abstractmethod
    def pose_edit_vjp(self, latent: WPlusLatent, cotangent: np.ndarray) -> tuple:
        """Gradient of <cotangent, generate(latent)> w.r.t. the (yaw, pitch)
        degrees that pose_edit would add at ``latent``."""

    @abc.abstractmethod
    def tail_params(self) -> np.ndarray:
        """Parameters of the layers downstream of the style injection point."""

    @abc.abstractmethod
    def set_tail_params(self, theta: np.ndarray) -> None:
        """Exclusive-writer update; callers must quiesce concurrent readers first."""

    @abc.abstractmethod
    def tail_vjp(self, ss: StyleSpaceLatent, cotangent: np.ndarray) -> np.ndarray:
        """Gradient of <cotangent, generate_ss(ss)> with respect to tail_params."""


class InverterBackend(abc.ABC):
    @abc.abstractmethod
    def invert(self, image: np.ndarray) -> WPlusLatent: ...

    def invert_with_info(self, image: np.ndarray):
        """Return (latent, info dict with 'residual' and 'out_of_domain')."""
        latent = self.invert(image)
        return latent, {"residual": float("nan"), "out_of_domain": False}


class PerceptualMetric(abc.ABC):
    @abc.abstractmethod
    def distance(self, a: np.ndarray, b: np.ndarray, mask=None) -> float: ...

    @abc.abstractmethod
    def distance_grad(self, a: np.ndarray, b: np.ndarray, mask=None):
        """Return (distance, d distance / d a)."""


class IdentityEmbedder(abc.ABC):
    @abc.abstractmethod
    def embed(self, image: np.ndarray) -> np.ndarray:
        """Unit-norm identity vector."""

    @abc.abstractmethod
    def embed_cos_vjp(self, image_a: np.ndarray, image_b: np.ndarray):
        """Return (cos similarity, d cos / d image_a)."""


class FaceParser(abc.ABC):
    @abc.abstractmethod
    def parse(self, image: np.ndarray) -> np.ndarray:
        """Per-pixel class-score map (H, W, K), differentiable in the image."""

    @abc.abstractmethod
    def parse_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Pull an (H, W, K) cotangent back to the image."""


class LandmarkTracker(abc.ABC):
    LANDMARK_COUNT = 81

    @abc.abstractmethod
    def landmark_names(self) -> tuple: ...

    @abc.abstractmethod
    def landmarks(self, image: np.ndarray) -> np.ndarray:
        """(81, 2) array of (x, y) pixel coordinates, ordered as landmark_names."""

    @abc.abstractmethod
    def head_pose_estimate(self, image: np.ndarray) -> tuple:
        """(yaw_deg, pitch_deg, roll_deg)."""

    @abc.abstractmethod
    def blink_score(self, image: np.ndarray) -> float: ...

    def face_present(self, image: np.ndarray) -> bool:
        """Whether a trackable face exists in the frame (default: assume yes)."""
        return True
