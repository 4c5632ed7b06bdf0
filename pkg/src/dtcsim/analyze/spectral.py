"""Windowed Fourier spectra, crystalline fraction and sliding peak heights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..model import Protocol

MIN_WINDOW = 8
DEFAULT_WINDOW = 36


class AnalysisError(ValueError):
    """Analysis precondition not met."""


def _values(trace) -> np.ndarray:
    vals = getattr(trace, "values", trace)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim != 1:
        raise AnalysisError("trace must be one-dimensional")
    return vals


def _order(order) -> int:
    if isinstance(order, (int, np.integer)):
        if order not in (2, 3):
            raise AnalysisError(f"subharmonic order must be 2 or 3, got {order}")
        return int(order)
    return Protocol(order).order


@dataclass
class Spectrum:
    """Power ``|S(nu)|^2`` on the grid ``nu = k/L``, k = 0..L-1.

    ``S = DFT(x) / sqrt(L)`` so the weights sum to the window energy.
    """

    frequencies: np.ndarray
    weights: np.ndarray

    @property
    def length(self) -> int:
        return self.weights.size

    def bin(self, nu: float) -> int:
        return int(round(nu * self.length)) % self.length

    def weight_at(self, nu: float) -> float:
        return float(self.weights[self.bin(nu)])

    def total(self, exclude_dc: bool = True) -> float:
        w = self.weights[1:] if exclude_dc else self.weights
        return float(w.sum())


def spectrum(trace, start: int = 0, length: int | None = None) -> Spectrum:
    x = _values(trace)
    if length is None:
        length = x.size - start
    if length < MIN_WINDOW:
        raise AnalysisError(f"window length must be >= {MIN_WINDOW}")
    if start < 0 or start + length > x.size:
        raise AnalysisError(f"window [{start}, {start + length}) outside trace of length {x.size}")
    seg = x[start:start + length]
    s = np.fft.fft(seg) / np.sqrt(length)
    return Spectrum(np.arange(length) / length, np.abs(s) ** 2)


def crystalline_fraction(spec: Spectrum, order, exclude_dc: bool = True) -> float:
    """Subharmonic weight over total weight; period 3 counts both mirror bins."""
    m = _order(order)
    total = spec.total(exclude_dc)
    if not total > 0:
        raise AnalysisError("spectrum has zero weight")
    weight = spec.weight_at(1 / m)
    if m == 3:
        weight *= 2
    return float(min(max(weight / total, 0.0), 1.0))


@dataclass
class PeakHeightSeries:
    n_sweep: np.ndarray
    heights: np.ndarray
    window_length: int
    order: int = 2

    def __len__(self) -> int:
        return self.heights.size


def peak_height_series(trace, order, window: int = DEFAULT_WINDOW, stride: int = 1) -> PeakHeightSeries:
    """``|S(1/m)|^2`` of every window of length ``window``, start advanced by ``stride``."""
    m = _order(order)
    x = _values(trace)
    if window < MIN_WINDOW:
        raise AnalysisError(f"window length must be >= {MIN_WINDOW}")
    if x.size < window + 1:
        raise AnalysisError(f"trace of length {x.size} too short for window {window}")
    k = int(round(window / m))
    phase = np.exp(-2j * np.pi * k * np.arange(window) / window)
    segs = sliding_window_view(x, window)[::stride]
    heights = np.abs(segs @ phase) ** 2 / window
    return PeakHeightSeries(np.arange(segs.shape[0]) * stride, heights, window, m)
