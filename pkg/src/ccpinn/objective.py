"""Data, state and cross-correlated residuals and the multi-frequency loss.

Every residual is normalized by a fixed data norm: ||E_meas||_F^2 for the
data and cross terms, ||E_inc||_F^2 for the state term.  Those norms are
captured when a :class:`~ccpinn.physics.FrequencyChannel` is built and are
never recomputed from the optimization variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .physics.channel import FrequencyChannel
from .physics.operators import SpectralKernel, apply_domain_operator
from .scene import EPS0


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, freq: float | None = None):
        where = f" at {freq:.4g} Hz" if freq is not None else ""
        super().__init__(f"non-finite {term} loss{where}")
        self.term = term
        self.freq = freq


def _norm2(x: np.ndarray) -> float:
    x = x.ravel()
    return float(np.vdot(x, x).real)


def _rows(a: np.ndarray, n_tx: int) -> np.ndarray:
    return a.reshape(n_tx, -1)


def loss_data(J, g_s, e_meas, mask=None, meas_norm2: float | None = None) -> float:
    """||mask * (G_S J - E_meas)||^2 / ||mask * E_meas||^2."""
    e_meas = np.asarray(e_meas)
    mask = np.ones(e_meas.shape, bool) if mask is None else mask
    denom = _norm2(np.where(mask, e_meas, 0)) if meas_norm2 is None else meas_norm2
    if denom <= 0:
        raise ValueError("measured data has zero norm")
    r = np.where(mask, _rows(J, e_meas.shape[0]) @ g_s.T - e_meas, 0)
    return _norm2(r) / denom


def total_field(J: np.ndarray, e_inc: np.ndarray, kernel: SpectralKernel) -> np.ndarray:
    """E_inc + G_D J for fields shaped (P, N, N)."""
    return e_inc + apply_domain_operator(J, kernel)


def loss_state(chi, J, e_inc, kernel: SpectralKernel, inc_norm2: float | None = None) -> float:
    """||chi * (E_inc + G_D J) - J||^2 / ||E_inc||^2."""
    denom = _norm2(e_inc) if inc_norm2 is None else inc_norm2
    r = chi * total_field(J, e_inc, kernel) - J
    return _norm2(r) / denom


def loss_cross(chi, J, e_inc, kernel, g_s, e_meas, mask=None, meas_norm2: float | None = None) -> float:
    """||G_S (chi * (E_inc + G_D J)) - E_meas||^2 / ||E_meas||^2."""
    w = chi * total_field(J, e_inc, kernel)
    return loss_data(w, g_s, e_meas, mask, meas_norm2)


@dataclass
class Residuals:
    """Shared intermediates for one frequency; ``e_tot`` = E_inc + G_D J."""

    e_tot: np.ndarray
    w: np.ndarray
    r_data: np.ndarray
    r_state: np.ndarray
    r_cross: np.ndarray
    l_data: float
    l_state: float
    l_cross: float


def channel_residuals(chi: np.ndarray, J: np.ndarray, ch: FrequencyChannel) -> Residuals:
    """All three residuals of one channel with a single G_D J evaluation."""
    p = ch.n_tx
    e_tot = ch.e_inc + apply_domain_operator(J, ch.kernel)
    w = chi * e_tot
    r_data = (_rows(J, p) @ ch.g_s.T - ch.e_meas) * ch.mask
    r_state = w - J
    r_cross = (_rows(w, p) @ ch.g_s.T - ch.e_meas) * ch.mask
    return Residuals(
        e_tot, w, r_data, r_state, r_cross,
        _norm2(r_data) / ch.meas_norm2,
        _norm2(r_state) / ch.inc_norm2,
        _norm2(r_cross) / ch.meas_norm2,
    )


def beta(epoch: float, total_epochs: float) -> float:
    """exp(-10 epoch / total_epochs)."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return math.exp(-10.0 * epoch / total_epochs)


def staged_beta(epoch: int, stage_start: int, stage_length: int) -> float:
    """Per-stage decay: the counter restarts at every stage boundary."""
    return beta(epoch - stage_start, stage_length)


@dataclass
class LossTerms:
    freqs: list[float] = field(default_factory=list)
    l_data: list[float] = field(default_factory=list)
    l_state: list[float] = field(default_factory=list)
    l_cross: list[float] = field(default_factory=list)
    beta: float = 1.0
    total: float = 0.0

    def add(self, freq: float, ld: float, ls: float, lc: float, weights=(1.0, 1.0, 1.0)) -> None:
        self.freqs.append(freq)
        self.l_data.append(ld)
        self.l_state.append(ls)
        self.l_cross.append(lc)
        self.total += weights[0] * ld + weights[1] * ls + weights[2] * self.beta * lc


def chi_from_medium(eps_r: np.ndarray, sigma: np.ndarray, freq: float, n: int) -> np.ndarray:
    return ((eps_r - 1.0) - 1j * sigma / (2.0 * math.pi * freq * EPS0)).reshape(n, n)


def total_loss(
    net,
    J: Mapping[int, np.ndarray],
    channels: Sequence[FrequencyChannel],
    active: Sequence[int],
    beta_value: float,
    features: np.ndarray,
    weights=(1.0, 1.0, 1.0),
) -> tuple[float, LossTerms]:
    """Sum over ``active`` channel indices of l_data + l_state + beta * l_cross.

    ``features`` are the Fourier features of the training-grid cell centers;
    ``weights`` scale (data, state, cross) and default to the plain sum.
    """
    if not active:
        raise ValueError("no active frequencies")
    eps, sig = net.forward(None, features=features)
    terms = LossTerms(beta=float(beta_value))
    for i in active:
        ch = channels[i]
        chi = chi_from_medium(eps, sig, ch.freq, ch.n)
        res = channel_residuals(chi, J[i], ch)
        terms.add(ch.freq, res.l_data, res.l_state, res.l_cross, weights)
    return terms.total, terms
