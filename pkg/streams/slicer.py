"""Intensity slices: split an image into disjoint-bin copies that sum back to the original."""
from dataclasses import dataclass

import numpy as np

from .exceptions import SliceError

MODES = ('pixel-luminance', 'per-channel')

VALUE_RANGE = 256


@dataclass(frozen=True)
class SliceSpec:
    num_slices: int
    mode: str = 'pixel-luminance'
    edges: tuple = ()
    include_upper_on_last: bool = True

    def __post_init__(self):
        if self.num_slices < 1:
            raise SliceError(f"num_slices must be >= 1, got {self.num_slices}")
        if self.mode not in MODES:
            raise SliceError(f"unknown slice mode {self.mode!r} (one of {', '.join(MODES)})")
        edges = self.edges or default_edges(self.num_slices)
        if len(edges) != self.num_slices + 1:
            raise SliceError(f"{self.num_slices} slices need {self.num_slices + 1} edges, got {len(edges)}")
        if edges[0] != 0 or edges[-1] != VALUE_RANGE:
            raise SliceError(f"edges must run from 0 to {VALUE_RANGE}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise SliceError("edges must be strictly increasing")
        object.__setattr__(self, 'edges', tuple(float(e) for e in edges))


def default_edges(num_slices):
    return tuple(VALUE_RANGE * k / num_slices for k in range(num_slices + 1))


def make_spec(num_slices, mode='pixel-luminance') -> SliceSpec:
    """Equal-width bins over [0, 256)."""
    return SliceSpec(num_slices=num_slices, mode=mode)


def _bin_index(values, spec):
    # right-closed search gives bin k for edges[k] <= v < edges[k+1]
    index = np.searchsorted(np.asarray(spec.edges), values, side='right') - 1
    if spec.include_upper_on_last:
        index = np.minimum(index, spec.num_slices - 1)
    return index


def _check_range(images):
    images = np.asarray(images)
    if images.size and (np.min(images) < 0 or np.max(images) >= VALUE_RANGE):
        raise SliceError(f"pixel values must lie in [0, {VALUE_RANGE})")
    if images.shape[-1] != 3:
        raise SliceError(f"expected 3 colour channels, got shape {images.shape}")
    return images


def slice_batch(images, spec) -> list:
    """Slices for a batch (N, H, W, 3): returns ``num_slices`` arrays of the input's shape and dtype."""
    images = _check_range(images)
    if spec.mode == 'pixel-luminance':
        membership = _bin_index(images.astype(np.float64).mean(axis=-1), spec)[..., None]
    else:
        membership = _bin_index(images, spec)
    zero = np.zeros((), dtype=images.dtype)
    return [np.where(membership == k, images, zero) for k in range(spec.num_slices)]


def slice_image(image, spec):
    """Slices of one HxWx3 image; slice ``k`` keeps what falls into bin ``k`` and zeroes the rest."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise SliceError(f"expected an HxWx3 image, got shape {image.shape}")
    return [s[0] for s in slice_batch(image[None], spec)]
