"""Latent value types and the offset algebra used by every pipeline stage.

Two spaces appear throughout: the extended per-layer latent (one row per
synthesis layer) and the style space produced by the generator's affine
transforms (one channel vector per layer, ragged widths allowed).  All types
here have value semantics: operations return copies and never mutate their
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError, ValidationError

GROUP_ORDER = ("mouth", "chin_jaw", "eyes", "eyebrows", "gaze")


@dataclass(frozen=True)
class WPlusLatent:
    """Extended latent: an (n_layers x dim_per_layer) real matrix."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise LayoutError(f"W+ latent must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("W+ latent contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    @property
    def dim_per_layer(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "WPlusLatent":
        return WPlusLatent(self.values.copy())

    def with_values(self, values: np.ndarray) -> "WPlusLatent":
        return WPlusLatent(np.asarray(values, dtype=np.float64))

    def allclose(self, other: "WPlusLatent", atol: float = 0.0) -> bool:
        return self.values.shape == other.values.shape and np.allclose(
            self.values, other.values, rtol=0.0, atol=atol
        )


class StyleSpaceLatent:
    """Per-layer channel vectors after the generator's affine transform.

    Layers may have different widths (real style spaces do), so storage is a
    list of 1-D float arrays rather than one matrix.
    """

    __slots__ = ("channels",)

    def __init__(self, channels):
        chans = []
        for layer, vec in enumerate(channels):
            arr = np.asarray(vec, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite style value in layer {layer}")
            chans.append(arr)
        self.channels = chans

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    @property
    def widths(self) -> tuple:
        return tuple(len(c) for c in self.channels)

    def copy(self) -> "StyleSpaceLatent":
        return StyleSpaceLatent([c.copy() for c in self.channels])

    def __getitem__(self, index: "StyleIndex") -> float:
        return float(self.channels[index.layer][index.channel])

    def same_layout(self, other: "StyleSpaceLatent") -> bool:
        return self.widths == other.widths

    def allclose(self, other: "StyleSpaceLatent", atol: float = 0.0) -> bool:
        if not self.same_layout(other):
            return False
        return all(
            np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.channels, other.channels)
        )

    def check_index(self, index: "StyleIndex") -> None:
        if index.layer < 0 or index.layer >= self.n_layers:
            raise LayoutError(f"layer {index.layer} out of range (n_layers={self.n_layers})")
        if index.channel < 0 or index.channel >= len(self.channels[index.layer]):
            raise LayoutError(
                f"channel {index.channel} out of range for layer {index.layer} "
                f"(width={len(self.channels[index.layer])})"
            )


@dataclass(frozen=True, order=True)
class StyleIndex:
    """One scalar style channel, addressed by (layer, channel)."""

    layer: int
    channel: int

    def __post_init__(self):
        if self.layer < 0 or self.channel < 0:
            raise ValidationError(f"style index must be non-negative, got {self}")

    def as_tuple(self):
        return (self.layer, self.channel)


class AttributeGroups:
    """Named, ordered groups of style indices.

    The flattened union defines the component order of every offset vector
    (and of the bitstream's per-frame record), so iteration order is fixed:
    groups in GROUP_ORDER sequence, indices within a group in the order the
    config lists them.  Groups must be pairwise disjoint.
    """

    def __init__(self, groups: dict):
        unknown = set(groups) - set(GROUP_ORDER)
        if unknown:
            raise ValidationError(f"unknown attribute group(s): {sorted(unknown)}")
        self._groups = {}
        seen = set()
        for name in GROUP_ORDER:
            indices = [
                ix if isinstance(ix, StyleIndex) else StyleIndex(*ix)
                for ix in groups.get(name, [])
            ]
            for ix in indices:
                if ix in seen:
                    raise ValidationError(f"index {ix.as_tuple()} appears in two groups")
                seen.add(ix)
            self._groups[name] = tuple(indices)
        self._flat = tuple(ix for name in GROUP_ORDER for ix in self._groups[name])
        self._positions = {ix: k for k, ix in enumerate(self._flat)}

    @property
    def groups(self) -> dict:
        return dict(self._groups)

    @property
    def flat(self) -> tuple:
        return self._flat

    def __len__(self) -> int:
        return len(self._flat)

    def group_of(self, index: StyleIndex) -> str:
        for name, members in self._groups.items():
            if index in members:
                return name
        raise KeyError(index)

    def position(self, index: StyleIndex) -> int:
        return self._positions[index]

    def slice_of(self, name: str) -> slice:
        start = 0
        for g in GROUP_ORDER:
            n = len(self._groups[g])
            if g == name:
                return slice(start, start + n)
            start += n
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {name: [ix.as_tuple() for ix in members] for name, members in self._groups.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeGroups":
        return cls({name: [tuple(pair) for pair in pairs] for name, pairs in d.items()})


@dataclass(frozen=True)
class AlphaVector:
    """Offset vector aligned to an AttributeGroups' flattened index order."""

    values: np.ndarray
    groups: AttributeGroups = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(arr) != len(self.groups):
            raise ValidationError(
                f"alpha length {len(arr)} != group union size {len(self.groups)}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError("alpha contains non-finite entries")
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, groups: AttributeGroups) -> "AlphaVector":
        return cls(np.zeros(len(groups)), groups)


def apply_offsets(base: StyleSpaceLatent, groups: AttributeGroups, alpha: AlphaVector) -> StyleSpaceLatent:
    """Return a copy of ``base`` with ``alpha[k]`` added at the k-th group index.

    Entries outside the group union are untouched.  Additive: applying a1 then
    a2 equals applying a1+a2.
    """
    if alpha.groups is not groups and alpha.groups.flat != groups.flat:
        raise ValidationError("alpha vector was built for a different group layout")
    out = base.copy()
    for k, ix in enumerate(groups.flat):
        out.check_index(ix)
        out.channels[ix.layer][ix.channel] += alpha.values[k]
    return out


def copy_indices(dst: StyleSpaceLatent, src: StyleSpaceLatent, indices) -> StyleSpaceLatent:
    """Return ``dst`` with the entries at ``indices`` replaced by ``src``'s."""
    if not dst.same_layout(src):
        raise LayoutError(f"style layouts differ: {dst.widths} vs {src.widths}")
    out = dst.copy()
    for ix in indices:
        out.check_index(ix)
        out.channels[ix.layer][ix.channel] = src.channels[ix.layer][ix.channel]
    return out
