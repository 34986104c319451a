"""Weight/mask pairs and their pruning thresholds."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class ThresholdSpec:
    """Two-threshold magnitude rule for one layer.

    ``a`` is the prune threshold and ``b`` the splice threshold; magnitudes in
    ``[a, b)`` keep their current mask state.  ``c`` scales the standard
    deviation term when the thresholds are derived from the layer weights.
    """

    c: float = 0.0
    band_lo: float = 0.9
    band_hi: float = 1.1
    a: float = 0.0
    b: float = 0.0
    frozen: bool = False

    def __post_init__(self):
        if self.band_lo > self.band_hi:
            raise ValueError(f"band_lo {self.band_lo} exceeds band_hi {self.band_hi}")
        if self.frozen and not 0.0 <= self.a <= self.b:
            raise ValueError(f"frozen thresholds need 0 <= a <= b, got a={self.a}, b={self.b}")

    @property
    def margin(self) -> float:
        return self.b - self.a


@dataclass
class MaskedParams:
    w: np.ndarray
    t: np.ndarray
    thresholds: ThresholdSpec

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.w.shape != self.t.shape:
            raise ShapeError(f"weight {self.w.shape} and mask {self.t.shape} shapes differ")
        if not np.all((self.t == 0.0) | (self.t == 1.0)):
            raise ValueError("mask entries must be exactly 0.0 or 1.0")

    @classmethod
    def dense(cls, w, c: float = 0.0) -> "MaskedParams":
        w = np.asarray(w, dtype=np.float64)
        return cls(w, np.ones_like(w), ThresholdSpec(c=c))

    @property
    def effective(self) -> np.ndarray:
        return self.w * self.t

    @property
    def kept(self) -> int:
        return int(np.count_nonzero(self.t))

    def copy(self) -> "MaskedParams":
        return MaskedParams(self.w.copy(), self.t.copy(), copy.copy(self.thresholds))
