"""Multi-category sketches and the sketch-aware loss weighting.

A sketch is an (H, W, N) binary stack, one channel per category; channels may overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SAL_FLOOR = 0.1
SAL_KERNEL_SIZE = 11


@dataclass
class SketchMap:
    channels: np.ndarray  # (H, W, N) uint8 in {0, 1}
    category_names: list[str]

    def __post_init__(self):
        ch = np.asarray(self.channels)
        if ch.ndim != 3:
            raise ValueError("sketch channels must be (H, W, N)")
        if ch.shape[2] != len(self.category_names) or ch.shape[2] < 1:
            raise ValueError("one category name per channel is required")
        if not np.isin(ch, (0, 1)).all():
            raise ValueError("sketch values must be binary")
        self.channels = ch.astype(np.uint8)

    @classmethod
    def from_labels(cls, labels, categories: dict[str, int]):
        """Build a sketch from an integer label raster; ``categories`` maps name -> label id."""
        names = list(categories)
        stack = np.stack([(np.asarray(labels) == categories[n]) for n in names], axis=-1)
        return cls(stack.astype(np.uint8), names)


def channel_max(sketch: SketchMap):
    """Per-pixel max over channels (boolean any)."""
    return sketch.channels.max(axis=2)


def gaussian_kernel(size=SAL_KERNEL_SIZE, sigma=2.0):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def sal_weights(sketch: SketchMap, sigma=2.0):
    """max(0.1, G * any(S)) with a normalized 11x11 Gaussian and replicate borders."""
    support = channel_max(sketch).astype(float)
    blurred = ndimage.correlate(support, gaussian_kernel(SAL_KERNEL_SIZE, sigma), mode="nearest")
    # normalized kernel over a {0,1} field can overshoot 1 by rounding
    return np.clip(np.maximum(SAL_FLOOR, blurred), SAL_FLOOR, 1.0)


def sal_loss(eps_true, eps_pred, omega):
    """Mean of (omega * (eps - eps_pred))**2; omega is (H, W), samples (H, W) or (C, H, W)."""
    eps_true = np.asarray(eps_true, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if eps_true.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {eps_true.shape} vs {eps_pred.shape}")
    if eps_true.shape[-2:] != omega.shape:
        raise ValueError(f"weight map {omega.shape} does not match samples {eps_true.shape}")
    return float(np.mean((omega * (eps_true - eps_pred)) ** 2))


def dropout_categories(sketch: SketchMap, keep_prob=0.5, seed=0):
    """Zero each channel independently with probability 1 - keep_prob.

    Dropping every channel is allowed (text-only conditioning).
    """
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError("keep_prob must be in [0, 1]")
    rng = np.random.default_rng(seed)
    keep = rng.random(sketch.channels.shape[2]) < keep_prob
    return SketchMap(sketch.channels * keep.astype(np.uint8), list(sketch.category_names))
