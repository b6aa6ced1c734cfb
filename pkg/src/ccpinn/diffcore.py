"""Reverse-mode gradients of the physics loss with respect to theta and J.

The loss composition is fixed (network -> contrast -> three residuals), so
the adjoint of each stage is written out directly:

* G_S^H is the conjugate transpose of the data operator;
* G_D^H is convolution with the conjugated kernel (G_D is complex symmetric);
* a Hadamard product chi * E back-propagates as conj(E) * g to chi and
  conj(chi) * g to E.

Complex convention: for a real loss L and complex variable z = a + jb the
returned gradient is dL/da + j dL/db.  Under this convention the gradient of
||z||^2 is 2z, and z <- z - lr * grad is steepest descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .objective import LossTerms, NonFiniteLossError, chi_from_medium, channel_residuals
from .physics.channel import FrequencyChannel
from .physics.operators import apply_domain_adjoint
from .scene import EPS0


@dataclass
class GradientBundle:
    d_theta: dict[str, np.ndarray]
    d_J: dict[int, np.ndarray]

    def all_finite(self) -> bool:
        arrays = list(self.d_theta.values()) + list(self.d_J.values())
        return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass
class LossEvaluator:
    """The loss to differentiate: which channels, the cross weight and per-term weights."""

    channels: Sequence[FrequencyChannel]
    features: np.ndarray
    active: Sequence[int]
    beta: float = 1.0
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.active):
            raise ValueError("no active frequencies")


def gradient(evaluator: LossEvaluator, net, J: Mapping[int, np.ndarray]):
    """Loss value, per-term breakdown and exact gradients.

    Returns ``(total, LossTerms, GradientBundle)``.  ``J`` maps channel index
    to a (P, N, N) complex array; only active channels are read.
    """
    wd, ws, wc = evaluator.weights
    beta = float(evaluator.beta)
    eps, sig, cache = net.forward(None, features=evaluator.features, keep_cache=True)
    d_eps = np.zeros_like(eps)
    d_sig = np.zeros_like(sig)
    terms = LossTerms(beta=beta)
    d_J: dict[int, np.ndarray] = {}

    for i in evaluator.active:
        ch = evaluator.channels[i]
        Ji = J[i]
        chi = chi_from_medium(eps, sig, ch.freq, ch.n)
        res = channel_residuals(chi, Ji, ch)
        for name, val in (("data", res.l_data), ("state", res.l_state), ("cross", res.l_cross)):
            if not math.isfinite(val):
                raise NonFiniteLossError(name, ch.freq)
        terms.add(ch.freq, res.l_data, res.l_state, res.l_cross, evaluator.weights)

        p, n = ch.n_tx, ch.n
        conj_gs = np.conj(ch.g_s)
        c_data = 2.0 * wd / ch.meas_norm2
        c_state = 2.0 * ws / ch.inc_norm2
        c_cross = 2.0 * wc * beta / ch.meas_norm2

        g_w = c_state * res.r_state
        g_w += (c_cross * (res.r_cross @ conj_gs)).reshape(p, n, n)
        g_J = (c_data * (res.r_data @ conj_gs)).reshape(p, n, n) - c_state * res.r_state
        g_J += apply_domain_adjoint(np.conj(chi) * g_w, ch.kernel)
        d_J[i] = g_J

        g_chi = np.sum(np.conj(res.e_tot) * g_w, axis=0).ravel()
        d_eps += g_chi.real
        d_sig -= g_chi.imag / (2.0 * math.pi * ch.freq * EPS0)

    if not math.isfinite(terms.total):
        raise NonFiniteLossError("total")
    d_theta = net.backward(cache, d_eps, d_sig)
    return terms.total, terms, GradientBundle(d_theta, d_J)


def loss_value(evaluator: LossEvaluator, net, J: Mapping[int, np.ndarray]) -> float:
    """Forward-only evaluation of the same loss ``gradient`` differentiates."""
    eps, sig = net.forward(None, features=evaluator.features)
    terms = LossTerms(beta=float(evaluator.beta))
    for i in evaluator.active:
        ch = evaluator.channels[i]
        res = channel_residuals(chi_from_medium(eps, sig, ch.freq, ch.n), J[i], ch)
        terms.add(ch.freq, res.l_data, res.l_state, res.l_cross, evaluator.weights)
    return terms.total
