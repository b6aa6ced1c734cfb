"""Transmitter/receiver geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayLayout:
    """Antenna positions shared by all frequencies.

    ``mask[p, q]`` is True when receiver ``q`` records data for transmitter
    ``p``.  Masked-out entries are absent from every data residual.
    """

    tx_positions: np.ndarray  # (P, 2)
    rx_positions: np.ndarray  # (Q, 2)
    mask: np.ndarray  # (P, Q) bool

    def __post_init__(self):
        tx = np.asarray(self.tx_positions, dtype=float).reshape(-1, 2)
        rx = np.asarray(self.rx_positions, dtype=float).reshape(-1, 2)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (len(tx), len(rx)):
            raise ValueError(f"mask shape {mask.shape} != ({len(tx)}, {len(rx)})")
        empty = np.flatnonzero(~mask.any(axis=1))
        if empty.size:
            raise ValueError(f"transmitters {empty.tolist()} have no active receiver")
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "mask", mask)

    @property
    def n_tx(self) -> int:
        return len(self.tx_positions)

    @property
    def n_rx(self) -> int:
        return len(self.rx_positions)

    @property
    def active_per_tx(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def check_outside(self, half_width: float) -> None:
        """Raise if any antenna lies inside the square ROI [-R, R]^2."""
        for name, pts in (("transmitter", self.tx_positions), ("receiver", self.rx_positions)):
            inside = np.all(np.abs(pts) <= half_width, axis=1)
            if inside.any():
                raise ValueError(f"{name} {int(np.flatnonzero(inside)[0])} lies inside the ROI")

    def compact(self, data: np.ndarray) -> np.ndarray:
        """Drop masked entries of a (P, Q) array when every row keeps the same count."""
        counts = self.active_per_tx
        if not np.all(counts == counts[0]):
            raise ValueError("ragged mask cannot be compacted")
        return np.asarray(data)[self.mask].reshape(self.n_tx, int(counts[0]))


def _on_circle(radius: float, angles_deg: np.ndarray) -> np.ndarray:
    a = np.deg2rad(angles_deg)
    return radius * np.stack([np.cos(a), np.sin(a)], axis=1)


def angular_distance_deg(a, b) -> np.ndarray:
    d = np.abs((np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0)
    return d


def circular_layout(
    radius: float,
    n_tx: int,
    n_rx: int,
    exclusion_halfangle: float = 0.0,
    roi_half_width: float | None = None,
) -> ArrayLayout:
    """Transmitters and receivers uniformly spaced on one circle, both starting at 0 deg.

    Receivers strictly closer than ``exclusion_halfangle`` degrees to a
    transmitter are masked out for that transmitter; a half-angle of 180 or
    more excludes everything and is rejected.
    """
    if n_tx < 1 or n_rx < 1:
        raise ValueError("need at least one transmitter and one receiver")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if roi_half_width is not None and radius <= roi_half_width * math.sqrt(2.0):
        raise ValueError(f"array radius {radius} m does not clear the ROI corner")
    if exclusion_halfangle >= 180.0:
        raise ValueError("exclusion sector covers the full circle")
    tx_ang = np.arange(n_tx) * 360.0 / n_tx
    rx_ang = np.arange(n_rx) * 360.0 / n_rx
    dist = angular_distance_deg(rx_ang[None, :], tx_ang[:, None])
    mask = dist >= exclusion_halfangle - 1e-9
    return ArrayLayout(_on_circle(radius, tx_ang), _on_circle(radius, rx_ang), mask)


def synthetic_ring_layout(roi_half_width: float | None = 0.5) -> ArrayLayout:
    """12 transmitters, receivers every 3 deg on a 3 m circle, 101 active per transmitter."""
    return circular_layout(3.0, 12, 120, 30.0, roi_half_width)
