"""Coordinate-free shrinkage baselines for noisy aggregate vectors.

Alternatives to the circulant smoother for the server-side denoising
slot: James-Stein positive-part shrinkage and the universal soft
threshold. Both take the known per-coordinate noise std nu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smoothing import make_operator, smooth_apply

__all__ = ["james_stein", "soft_threshold", "Denoiser", "DENOISER_KINDS"]


def james_stein(v: np.ndarray, nu: float) -> np.ndarray:
    """Positive-part James-Stein estimate of the mean of v ~ N(mu, nu^2 I)."""
    v = np.asarray(v, dtype=np.float64)
    assert v.ndim == 1 and v.size >= 3, "James-Stein needs dimension >= 3"
    assert nu >= 0.0
    sq = float(np.dot(v, v))
    if sq == 0.0:
        return np.zeros_like(v)
    return v * max(0.0, 1.0 - (v.size - 2) * nu**2 / sq)


def soft_threshold(v: np.ndarray, nu: float) -> np.ndarray:
    """Soft-threshold v at the universal level nu * sqrt(2 log d)."""
    v = np.asarray(v, dtype=np.float64)
    assert v.ndim == 1 and v.size >= 1
    assert nu >= 0.0
    t = nu * np.sqrt(2.0 * np.log(v.size)) if v.size > 1 else 0.0
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


DENOISER_KINDS = ("identity", "smoothing", "james_stein", "soft_threshold")


@dataclass(frozen=True)
class Denoiser:
    """Named server-side denoiser; `sigma` only matters for "smoothing"."""

    kind: str
    sigma: float = 0.0

    def __post_init__(self) -> None:
        assert self.kind in DENOISER_KINDS, f"unknown denoiser kind {self.kind!r}"

    def apply(self, v: np.ndarray, nu: float) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "identity":
            return v.copy()
        if self.kind == "smoothing":
            return smooth_apply(make_operator(self.sigma, v.size), v)
        if self.kind == "james_stein":
            return james_stein(v, nu)
        return soft_threshold(v, nu)
