"""State-equation solver used to synthesize measurement data."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .operators import SpectralKernel, apply_domain_operator


class ForwardSolveError(RuntimeError):
    def __init__(self, message: str, residuals: list[float] | None = None):
        super().__init__(message)
        self.residuals = list(residuals or [])


def state_residual(chi: np.ndarray, e_tot: np.ndarray, e_inc: np.ndarray, operator) -> float:
    """Relative residual of E_tot = E_inc + G_D (chi * E_tot), over all rows."""
    ng = chi.size
    et = e_tot.reshape(-1, ng)
    w = chi.ravel()[None, :] * et
    r = et - e_inc.reshape(-1, ng) - _apply(operator, w, chi.shape)
    return float(np.linalg.norm(r) / np.linalg.norm(e_inc))


def _apply(operator, w: np.ndarray, field_shape) -> np.ndarray:
    """Apply G_D (dense matrix or spectral kernel) to rows of ``w`` (R, N_g)."""
    if isinstance(operator, SpectralKernel):
        n = operator.n
        return apply_domain_operator(w.reshape(-1, n, n), operator).reshape(w.shape)
    return w @ operator.T


def forward_solve(
    chi: np.ndarray,
    e_inc: np.ndarray,
    operator,
    *,
    method: str = "auto",
    rtol: float = 1e-11,
    maxiter: int = 2000,
    check_tol: float = 1e-8,
) -> np.ndarray:
    """Total field for contrast ``chi`` (N, N) and incident rows ``e_inc`` (..., N_g or N, N).

    ``operator`` is the dense G_D or a :class:`SpectralKernel`.  ``method`` is
    ``"direct"`` (dense LU, needs the dense matrix), ``"gmres"`` or ``"auto"``.
    """
    chi = np.asarray(chi)
    if not np.all(np.isfinite(chi)):
        raise ValueError("contrast contains non-finite values")
    ng = chi.size
    rows = np.asarray(e_inc, dtype=complex).reshape(-1, ng)
    if not np.any(chi):
        return np.array(rows.reshape(np.shape(e_inc)), copy=True)
    chi_flat = chi.ravel().astype(complex)

    if method == "auto":
        method = "gmres" if isinstance(operator, SpectralKernel) else "direct"
    if method == "direct":
        if isinstance(operator, SpectralKernel):
            raise ValueError("direct solve needs the dense operator")
        a = np.eye(ng, dtype=complex) - operator * chi_flat[None, :]
        out = linalg.solve(a, rows.T, check_finite=False).T
    elif method == "gmres":
        out = np.empty_like(rows)
        for k, rhs in enumerate(rows):
            out[k] = _gmres_row(chi_flat, rhs, operator, rtol, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")

    res = state_residual(chi, out, rows, operator)
    if not res <= check_tol:
        raise ForwardSolveError(f"state residual {res:.3e} exceeds {check_tol:.1e}", [res])
    return out.reshape(np.shape(e_inc))


def _gmres_row(chi_flat, rhs, operator, rtol, maxiter):
    ng = chi_flat.size

    def matvec(e):
        e = np.asarray(e).ravel()
        return e - _apply(operator, (chi_flat * e)[None, :], None)[0]

    op = LinearOperator((ng, ng), matvec=matvec, dtype=complex)
    history: list[float] = []
    sol, info = gmres(
        op, rhs, x0=rhs.copy(), rtol=rtol, atol=0.0, restart=min(ng, 200), maxiter=maxiter,
        callback=history.append, callback_type="pr_norm",
    )
    if info != 0:
        raise ForwardSolveError(f"GMRES did not converge (info={info})", history)
    return sol


def scattered_at_receivers(g_s: np.ndarray, chi: np.ndarray, e_tot: np.ndarray) -> np.ndarray:
    """Receiver fields G_S (chi * E_tot), shape (P, Q)."""
    ng = chi.size
    w = chi.ravel()[None, :] * e_tot.reshape(-1, ng)
    return w @ g_s.T
