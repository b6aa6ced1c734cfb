"""Cylindrical-harmonic series for a line source scattered by a centred cylinder."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..scene import contrast_from_params


class MieConvergenceError(RuntimeError):
    pass


def mie_coefficients(k0: float, k1: complex, radius: float, orders: np.ndarray) -> np.ndarray:
    """Scattering coefficients c_n for outside field J_n + c_n H_n^(2) (TM)."""
    x0 = k0 * radius
    x1 = k1 * radius
    j0, dj0 = special.jv(orders, x0), special.jvp(orders, x0)
    h0, dh0 = special.hankel2(orders, x0), special.h2vp(orders, x0)
    j1, dj1 = special.jv(orders, x1), special.jvp(orders, x1)
    num = k1 * dj1 * j0 - k0 * j1 * dj0
    den = k0 * j1 * dh0 - k1 * dj1 * h0
    return num / den


def mie_cylinder_scattered(
    radius: float,
    eps_r: float,
    k0: float,
    tx_pos,
    rx_positions,
    sigma: float = 0.0,
    freq: float | None = None,
    order: int | None = None,
) -> np.ndarray:
    """Scattered field at ``rx_positions`` (Q, 2) for a unit line source at ``tx_pos``.

    The cylinder is centred at the origin.  For a lossy cylinder pass
    ``sigma`` together with ``freq``.  Both antennas must lie outside it.
    """
    tx = np.asarray(tx_pos, dtype=float).reshape(2)
    rx = np.asarray(rx_positions, dtype=float).reshape(-1, 2)
    if sigma:
        if freq is None:
            raise ValueError("lossy cylinder needs freq")
        chi = complex(contrast_from_params(eps_r, sigma, freq))
    else:
        chi = eps_r - 1.0
    if chi == 0:
        return np.zeros(len(rx), dtype=complex)
    k1 = k0 * np.sqrt(complex(1.0 + chi))

    rho_t, phi_t = math.hypot(*tx), math.atan2(tx[1], tx[0])
    rho_r = np.hypot(rx[:, 0], rx[:, 1])
    phi_r = np.arctan2(rx[:, 1], rx[:, 0])
    if rho_t <= radius or np.any(rho_r <= radius):
        raise ValueError("antennas must lie outside the cylinder")

    nmax = int(math.ceil(k0 * radius)) + 15 if order is None else int(order)
    n = np.arange(nmax + 1)
    c = mie_coefficients(k0, k1, radius, n)
    ht = special.hankel2(n, k0 * rho_t)
    hr = special.hankel2(n[None, :], k0 * rho_r[:, None])
    terms = (c * ht)[None, :] * hr * np.cos(n[None, :] * (phi_r - phi_t)[:, None])
    terms[:, 1:] *= 2.0
    if not np.all(np.isfinite(terms)):
        raise MieConvergenceError(f"non-finite series terms up to order {nmax}")
    total = terms.sum(axis=1)
    tail = np.abs(terms[:, -1])
    if np.any(tail > 1e-12 * np.maximum(np.abs(total), 1e-300)):
        raise MieConvergenceError(f"series not converged at order {nmax}")
    return -0.25j * total
