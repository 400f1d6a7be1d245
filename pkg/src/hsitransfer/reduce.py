"""Multispectral simulation by non-overlapping band averaging, and downlink budgets."""

import math
from dataclasses import dataclass

import numpy as np

from hsitransfer.data import SpectralCube


def window_edges(source_bands, window):
    """Band boundaries for consecutive windows of ``window`` bands; the last may be partial."""
    if window < 1:
        raise ValueError(f"window length must be >= 1, got {window}")
    count = math.ceil(source_bands / window)
    return np.minimum(np.arange(count + 1) * window, source_bands)


def count_edges(source_bands, target_bands):
    """Boundaries floor(i * b_S / b_M) giving ``target_bands`` near-equal windows."""
    if not 1 <= target_bands <= source_bands:
        raise ValueError(f"target band count must be in 1..{source_bands}, got {target_bands}")
    return (np.arange(target_bands + 1) * source_bands) // target_bands


def mean_windows(spectra, edges):
    """Average the last axis of ``spectra`` over [edges[i], edges[i+1]).

    Accumulates in float64 with a fixed left-to-right order inside each window.
    """
    x = np.asarray(spectra, dtype=np.float64)
    widths = np.diff(edges)
    sums = np.add.reduceat(x, edges[:-1], axis=-1)
    return (sums / widths).astype(np.float32)


@dataclass(frozen=True)
class ReductionSpec:
    """Either ``window`` (bands per window) or ``target`` (output band count)."""

    window: int | None = None
    target: int | None = None
    aggregator: str = "mean"

    def __post_init__(self):
        if (self.window is None) == (self.target is None):
            raise ValueError("give exactly one of window or target")
        if self.window is not None and self.window < 1:
            raise ValueError(f"window length must be >= 1, got {self.window}")
        if self.target is not None and self.target < 1:
            raise ValueError(f"target band count must be >= 1, got {self.target}")
        if self.aggregator != "mean":
            raise ValueError(f"unsupported aggregator {self.aggregator!r}")

    def edges(self, source_bands):
        if self.window is not None:
            return window_edges(source_bands, self.window)
        return count_edges(source_bands, self.target)

    def output_bands(self, source_bands):
        return len(self.edges(source_bands)) - 1

    def apply(self, spectra):
        spectra = np.asarray(spectra)
        return mean_windows(spectra, self.edges(spectra.shape[-1]))

    def label(self):
        return f"w{self.window}" if self.window is not None else str(self.target)


def reduce_window(cube, window):
    return SpectralCube(mean_windows(cube.data, window_edges(cube.bands, window)))


def reduce_to_count(cube, target_bands):
    return SpectralCube(mean_windows(cube.data, count_edges(cube.bands, target_bands)))


@dataclass(frozen=True)
class LinkBudget:
    height: int
    width: int
    bands: int
    bit_depth: int
    rate_bps: float

    def __post_init__(self):
        for name in ("height", "width", "bands", "bit_depth", "rate_bps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def downlink_budget(budget):
    """Return (bits, seconds) to transmit one raw scene."""
    bits = budget.height * budget.width * budget.bands * budget.bit_depth
    return bits, bits / budget.rate_bps
