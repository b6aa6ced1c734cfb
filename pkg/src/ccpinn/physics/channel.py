"""Per-frequency operator bundles and the measured-data container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..scene import Grid, Phantom, contrast_map, rasterize, wavenumber
from .forward import forward_solve, scattered_at_receivers
from .layout import ArrayLayout
from .noise import add_noise_traces
from .operators import (
    SpectralKernel,
    build_spectral_kernel,
    data_operator,
    domain_operator_dense,
    incident_fields,
)


@dataclass
class Dataset:
    """Scattered-field measurements plus everything needed to rebuild operators.

    ``e_meas[i]`` is (P, Q) with zeros where ``layout.mask`` is False.
    ``grid`` is the inversion grid; ``truth`` is the reference phantom used
    for PSNR (may be None).
    """

    freqs: list[float]
    layout: ArrayLayout
    e_meas: list[np.ndarray]
    grid: Grid
    truth: Phantom | None = None
    snr_db: float | None = None
    seed: int | None = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)
    e_inc: list[np.ndarray] | None = None  # (P, N_g) per frequency on ``grid``

    def __post_init__(self):
        if len(self.freqs) != len(self.e_meas):
            raise ValueError("one measurement matrix per frequency required")
        shape = (self.layout.n_tx, self.layout.n_rx)
        for f, e in zip(self.freqs, self.e_meas):
            if e.shape != shape:
                raise ValueError(f"E_meas at {f} Hz has shape {e.shape}, expected {shape}")
            if not f > 0:
                raise ValueError("frequencies must be positive")
        if self.e_inc is not None:
            if len(self.e_inc) != len(self.freqs):
                raise ValueError("one incident-field matrix per frequency required")
            for e in self.e_inc:
                if e.shape != (self.layout.n_tx, self.grid.n_cells):
                    raise ValueError(f"E_inc shape {e.shape} inconsistent with layout and grid")

    def select(self, freqs: Sequence[float]) -> "Dataset":
        idx = []
        for f in freqs:
            hits = [k for k, g in enumerate(self.freqs) if abs(g - f) <= 1e-6 * f]
            if not hits:
                raise KeyError(f"frequency {f} Hz not in dataset")
            idx.append(hits[0])
        return Dataset(
            [self.freqs[k] for k in idx], self.layout, [self.e_meas[k] for k in idx],
            self.grid, self.truth, self.snr_db, self.seed, self.name, dict(self.meta),
            None if self.e_inc is None else [self.e_inc[k] for k in idx],
        )

    def incident(self, k: int) -> np.ndarray:
        """Incident field (P, N_g) of frequency ``k`` on the inversion grid."""
        if self.e_inc is not None:
            return self.e_inc[k]
        return incident_fields(self.layout, self.grid, wavenumber(self.freqs[k]))


@dataclass
class FrequencyChannel:
    """Operators and data for one frequency on the inversion grid."""

    freq: float
    k0: float
    e_inc: np.ndarray  # (P, N, N)
    g_s: np.ndarray  # (Q, N_g)
    kernel: SpectralKernel
    e_meas: np.ndarray  # (P, Q), zeros where masked
    mask: np.ndarray  # (P, Q) bool
    meas_norm2: float = field(init=False)
    inc_norm2: float = field(init=False)

    def __post_init__(self):
        p, n, n2 = self.e_inc.shape
        if n != n2 or n != self.kernel.n:
            raise ValueError("incident field does not match kernel grid")
        if self.g_s.shape[1] != n * n:
            raise ValueError("G_S column count does not match grid")
        if self.e_meas.shape != (p, self.g_s.shape[0]) or self.mask.shape != self.e_meas.shape:
            raise ValueError("measurement shape inconsistent with layout")
        if not self.k0 > 0:
            raise ValueError("k0 must be positive")
        self.e_meas = np.where(self.mask, self.e_meas, 0)
        # fixed normalizers, captured once
        self.meas_norm2 = float(np.vdot(self.e_meas, self.e_meas).real)
        self.inc_norm2 = float(np.vdot(self.e_inc, self.e_inc).real)
        if self.meas_norm2 <= 0:
            raise ValueError(f"measured field at {self.freq} Hz has zero norm")

    @property
    def n(self) -> int:
        return self.kernel.n

    @property
    def n_tx(self) -> int:
        return self.e_inc.shape[0]

    def astype(self, real_dtype) -> "FrequencyChannel":
        cdt = np.result_type(real_dtype, np.complex64)
        ch = FrequencyChannel(
            self.freq, self.k0, self.e_inc.astype(cdt), self.g_s.astype(cdt),
            self.kernel.astype(cdt), self.e_meas.astype(cdt), self.mask,
        )
        # keep the double-precision normalizers
        ch.meas_norm2, ch.inc_norm2 = self.meas_norm2, self.inc_norm2
        return ch


def build_channel(
    layout: ArrayLayout, grid: Grid, freq: float, e_meas: np.ndarray, pad_factor: int = 4,
    e_inc: np.ndarray | None = None,
) -> FrequencyChannel:
    k0 = wavenumber(freq)
    if e_inc is None:
        e_inc = incident_fields(layout, grid, k0)
    e_inc = np.asarray(e_inc, dtype=complex).reshape(layout.n_tx, grid.n, grid.n)
    return FrequencyChannel(
        freq, k0, e_inc, data_operator(layout, grid, k0),
        build_spectral_kernel(grid, k0, pad_factor), np.asarray(e_meas, dtype=complex), layout.mask,
    )


def build_channels(dataset: Dataset, pad_factor: int = 4, grid: Grid | None = None) -> list[FrequencyChannel]:
    if grid is None or grid == dataset.grid:
        return [
            build_channel(dataset.layout, dataset.grid, f, e, pad_factor, dataset.incident(k))
            for k, (f, e) in enumerate(zip(dataset.freqs, dataset.e_meas))
        ]
    return [build_channel(dataset.layout, grid, f, e, pad_factor) for f, e in zip(dataset.freqs, dataset.e_meas)]


def simulate_scattered(
    phantom: Phantom, layout: ArrayLayout, grid: Grid, freq: float, method: str = "auto"
) -> np.ndarray:
    """Noise-free scattered field (P, Q) of ``phantom`` computed on ``grid``."""
    k0 = wavenumber(freq)
    chi = contrast_map(rasterize(phantom, grid), freq)
    e_inc = incident_fields(layout, grid, k0)
    g_s = data_operator(layout, grid, k0)
    if method == "auto":
        method = "direct" if grid.n <= 48 else "gmres"
    if method == "direct":
        op = domain_operator_dense(grid, k0)
    else:
        op = build_spectral_kernel(grid, k0, 2)
    e_tot = forward_solve(chi, e_inc, op, method=method)
    return scattered_at_receivers(g_s, chi, e_tot)


def generate_synthetic(
    phantom: Phantom,
    freqs: Sequence[float],
    layout: ArrayLayout,
    inversion_grid: Grid,
    *,
    refine: int = 2,
    snr_db: float | None = None,
    seed: int = 0,
    name: str = "synthetic",
    method: str = "auto",
) -> Dataset:
    """Simulate on a grid ``refine`` times finer than ``inversion_grid`` and add noise.

    Noise is drawn once per transmitter trace from ``numpy.random.default_rng(seed)``
    in frequency order, so a (phantom, layout, seed, snr) tuple fixes the file.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    layout.check_outside(inversion_grid.half_width)
    fine = Grid(inversion_grid.half_width, inversion_grid.n * int(refine))
    rng = np.random.default_rng(seed)
    e_meas = []
    for f in freqs:
        clean = np.where(layout.mask, simulate_scattered(phantom, layout, fine, f, method), 0)
        e_meas.append(np.where(layout.mask, add_noise_traces(clean, layout.mask, snr_db, rng), 0))
    e_inc = [incident_fields(layout, inversion_grid, wavenumber(f)) for f in freqs]
    return Dataset(
        [float(f) for f in freqs], layout, e_meas, inversion_grid, phantom, snr_db, seed, name,
        {"generation_grid_n": fine.n, "refine": int(refine)}, e_inc,
    )
