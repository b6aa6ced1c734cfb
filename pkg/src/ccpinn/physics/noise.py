"""Complex white Gaussian noise at a prescribed SNR."""

from __future__ import annotations

import math

import numpy as np


def add_noise(y: np.ndarray, snr_db: float | None, rng: np.random.Generator) -> np.ndarray:
    """Return ``y`` plus circular complex Gaussian noise scaled to ``snr_db``.

    The noise power per sample is ||y||^2 / (N 10^(snr/10)).  ``None`` or
    ``+inf`` returns an unchanged copy without drawing from ``rng``.
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot add noise to an empty vector")
    if snr_db is None or math.isinf(snr_db) and snr_db > 0:
        return y.astype(complex, copy=True)
    power = float(np.vdot(y, y).real)
    if power <= 0:
        raise ValueError("signal has zero norm; SNR is undefined")
    scale = math.sqrt(power / (y.size * 10.0 ** (snr_db / 10.0)))
    n = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return y + scale * n / math.sqrt(2.0)


def add_noise_traces(
    data: np.ndarray, mask: np.ndarray, snr_db: float | None, rng: np.random.Generator
) -> np.ndarray:
    """Noise each transmitter row of ``data`` (P, Q) over its active receivers only."""
    out = np.array(data, dtype=complex, copy=True)
    for p in range(out.shape[0]):
        sel = mask[p]
        out[p, sel] = add_noise(out[p, sel], snr_db, rng)
    return out


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    clean = np.asarray(clean)
    err = np.asarray(noisy) - clean
    return 10.0 * math.log10(np.vdot(clean, clean).real / np.vdot(err, err).real)
