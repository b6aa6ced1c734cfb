"""Discretized Green's operators for 2D TM scattering (e^{jwt} convention).

All entries use the equivalent-circle pulse-basis quadrature: a square cell
of side ``d`` is replaced by a disk of equal area, radius ``a = d/sqrt(pi)``,
which integrates the Hankel kernel in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy import special

from ..scene import Grid
from .layout import ArrayLayout


def green(k0: float, dist) -> np.ndarray:
    """Free-space 2D Green's function -(j/4) H0^(2)(k0 |r - r'|)."""
    return -0.25j * special.hankel2(0, k0 * np.asarray(dist, dtype=float))


def equivalent_radius(grid: Grid) -> float:
    return grid.spacing / math.sqrt(math.pi)


def _offdiag_factor(k0: float, a: float) -> complex:
    return -0.5j * math.pi * k0 * a * special.j1(k0 * a)


def self_term(k0: float, a: float) -> complex:
    """k0^2 times the integral of G over a disk of radius ``a`` centred on the observer."""
    ka = k0 * a
    return -0.5j * math.pi * ka * special.hankel2(1, ka) - 1.0


def cell_integrated_kernel(k0: float, a: float, dist) -> np.ndarray:
    """k0^2 * integral of G over an equivalent disk at distance ``dist`` (> 0)."""
    return _offdiag_factor(k0, a) * special.hankel2(0, k0 * np.asarray(dist, dtype=float))


def _distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    diff = dst[:, None, :] - src[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def incident_fields(layout: ArrayLayout, grid: Grid, k0: float) -> np.ndarray:
    """Line-source fields at cell centers, shape (P, N_g)."""
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    d = _distances(layout.tx_positions, grid.points()).T  # (P, N_g)
    if np.any(d < 1e-12 * grid.spacing):
        raise ValueError("singular geometry: transmitter coincides with a cell center")
    return green(k0, d)


def data_operator(layout: ArrayLayout, grid: Grid, k0: float) -> np.ndarray:
    """Cell-to-receiver operator G_S, shape (Q, N_g)."""
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    layout_rx = layout.rx_positions
    if np.any(np.all(np.abs(layout_rx) <= grid.half_width, axis=1)):
        raise ValueError("receiver inside the ROI")
    d = _distances(grid.points(), layout_rx)  # (Q, N_g)
    return cell_integrated_kernel(k0, equivalent_radius(grid), d)


def domain_operator_dense(grid: Grid, k0: float) -> np.ndarray:
    """Dense cell-to-cell operator G_D, shape (N_g, N_g)."""
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    a = equivalent_radius(grid)
    pts = grid.points()
    d = _distances(pts, pts)
    np.fill_diagonal(d, 1.0)  # placeholder, overwritten below
    out = cell_integrated_kernel(k0, a, d)
    np.fill_diagonal(out, self_term(k0, a))
    return out


@dataclass(frozen=True)
class SpectralKernel:
    """Forward transform of the circulantly embedded G_D stencil."""

    n: int
    pad_factor: int
    ghat: np.ndarray  # (M, M) complex, M = pad_factor * n

    @property
    def padded_size(self) -> int:
        return self.pad_factor * self.n

    def astype(self, dtype) -> "SpectralKernel":
        return SpectralKernel(self.n, self.pad_factor, self.ghat.astype(dtype))


def kernel_stencil(grid: Grid, k0: float) -> np.ndarray:
    """G_D entries by displacement, shape (2N-1, 2N-1); centre is the self term."""
    n = grid.n
    a = equivalent_radius(grid)
    offs = np.arange(-(n - 1), n) * grid.spacing
    dx, dy = np.meshgrid(offs, offs, indexing="ij")
    d = np.hypot(dx, dy)
    d[n - 1, n - 1] = 1.0
    st = cell_integrated_kernel(k0, a, d)
    st[n - 1, n - 1] = self_term(k0, a)
    return st


def build_spectral_kernel(grid: Grid, k0: float, pad_factor: int = 4) -> SpectralKernel:
    if int(pad_factor) != pad_factor or pad_factor < 2:
        raise ValueError(f"pad_factor must be an integer >= 2, got {pad_factor}")
    n = grid.n
    m = int(pad_factor) * n
    g = np.zeros((m, m), dtype=complex)
    idx = np.arange(-(n - 1), n) % m
    g[np.ix_(idx, idx)] = kernel_stencil(grid, k0)
    return SpectralKernel(n, int(pad_factor), sfft.fft2(g))


def apply_domain_operator(J: np.ndarray, kernel: SpectralKernel) -> np.ndarray:
    """G_D J for fields shaped (..., N, N) via zero-padded FFT convolution."""
    n, m = kernel.n, kernel.padded_size
    if J.shape[-2:] != (n, n):
        raise ValueError(f"field shape {J.shape[-2:]} does not match kernel grid {n}x{n}")
    # the padded rows/columns are zero, so transform rows of J first and
    # only inverse-transform the rows that survive truncation
    spec = sfft.fft(J, n=m, axis=-1)
    spec = sfft.fft(spec, n=m, axis=-2)
    spec *= kernel.ghat
    out = sfft.ifft(spec, axis=-2)[..., :n, :]
    return sfft.ifft(out, axis=-1)[..., :n]


def apply_domain_adjoint(x: np.ndarray, kernel: SpectralKernel) -> np.ndarray:
    """G_D^H x.  G_D is complex symmetric, so G_D^H = conj(G_D)."""
    return np.conj(apply_domain_operator(np.conj(x), kernel))
