"""Asymptotic covariance of the jump/height estimates and Wald intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import quadrature
from .errors import ContractError, InferenceError
from .kernels import DEFAULT_QUAD_TOL, delta_phi
from .model import Density, forward_eval, nu_matrix
from .signal import StepFunction


def nu_vector(kernel, f, x):
    """nu(x) for step function ``f``; shape (2k+1,) for scalar x, else (m, 2k+1)."""
    if not isinstance(f, StepFunction):
        raise ContractError("nu_vector needs a canonical StepFunction")
    out = nu_matrix(kernel, f.levels, f.jumps, x)
    return out[0] if np.ndim(x) == 0 else out


def v_matrix(kernel, f, density=None, quad_tol=DEFAULT_QUAD_TOL):
    """V_ij = int_0^1 nu_i nu_j h dx by adaptive quadrature.

    Returns ``(V, min_eigenvalue)``.
    """
    if not isinstance(f, StepFunction):
        raise ContractError("v_matrix needs a canonical StepFunction")
    if not kernel.bounded:
        raise InferenceError("nu is not square integrable for the Abel kernel; "
                             "no normal limit law is available")
    density = density or Density.uniform()
    levels = np.asarray(f.levels)
    jumps = np.asarray(f.jumps)

    def integrand(xs):
        nu = nu_matrix(kernel, levels, jumps, xs)
        return nu[:, :, None] * nu[:, None, :] * density(xs)[:, None, None]

    breaks = [t + s for t in f.jumps for s in kernel.kinks] + list(density.knots)
    V = quadrature.integrate(integrand, 0.0, 1.0, tol=quad_tol, breakpoints=breaks)
    V = 0.5 * (V + V.T)
    return V, float(np.linalg.eigvalsh(V)[0])


def estimate_sigma2(data, fit, kernel):
    """Residual variance with the 2k+1 parameter degrees-of-freedom correction."""
    k_hat = fit.k_hat
    dof = data.n - (2 * k_hat + 1)
    if dof <= 0:
        raise ContractError("not enough observations to estimate sigma^2")
    edges = np.concatenate([[-np.inf], fit.jumps, [np.inf]])
    fitted = np.asarray(delta_phi(kernel, data.x[:, None], edges[:-1], edges[1:])) @ fit.levels
    resid = data.y - fitted
    return float(np.sum(resid * resid) / dof)


def normal_quantile(p):
    return float(ndtri(p))


def covariance(V, sigma2, n):
    """sigma^2 V^-1 / n."""
    V = np.asarray(V, dtype=float)
    try:
        np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise InferenceError("V is not positive definite") from None
    return sigma2 * np.linalg.inv(V) / n


def confidence_intervals(theta_hat, V, sigma2, n, level=0.95):
    """Marginal Wald intervals theta_j +- z sqrt((sigma^2 V^-1)_jj / n).

    ``theta_hat`` may be a parameter vector or a FitResult.
    """
    if not 0.0 < level < 1.0:
        raise ContractError("level must lie in (0, 1)")
    theta_hat = np.asarray(getattr(theta_hat, "theta_hat", theta_hat), dtype=float)
    cov = covariance(V, sigma2, n)
    z = normal_quantile(0.5 * (1.0 + level))
    half = z * np.sqrt(np.maximum(np.diag(cov), 0.0))
    return np.column_stack([theta_hat - half, theta_hat + half])


@dataclass
class InferenceReport:
    theta_hat: np.ndarray
    V: np.ndarray
    V_min_eig: float
    covariance: np.ndarray
    intervals: np.ndarray
    level: float
    sigma2_hat: float
    n: int
    degenerate: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "theta_hat": arr(self.theta_hat),
            "V": arr(self.V),
            "V_min_eigenvalue": self.V_min_eig,
            "covariance": arr(self.covariance),
            "sigma2_hat": self.sigma2_hat,
            "n": self.n,
            "level": self.level,
            "intervals": arr(self.intervals),
            "degenerate": self.degenerate,
            "notes": list(self.notes),
        }


def infer(data, fit, kernel, density=None, level=0.95, quad_tol=DEFAULT_QUAD_TOL):
    """Plug-in inference at the fitted parameters.

    A singular V yields a report flagged ``degenerate`` with no intervals.
    """
    if not kernel.bounded:
        raise InferenceError("inference is refused for the Abel kernel: only the "
                             "jump rate is known, not a limit law")
    step = fit.step()
    if step.k != fit.k_hat:
        raise InferenceError("fitted step function has equal adjacent levels")
    sigma2 = estimate_sigma2(data, fit, kernel)
    V, min_eig = v_matrix(kernel, step, density, quad_tol)
    try:
        cov = covariance(V, sigma2, data.n)
        intervals = confidence_intervals(fit.theta_hat, V, sigma2, data.n, level)
        degenerate = not min_eig > 0
    except InferenceError:
        cov, degenerate = None, True
    if degenerate:
        intervals = None
    notes = ["V evaluated at the estimated parameters"]
    return InferenceReport(fit.theta_hat.copy(), V, min_eig, cov, intervals, level,
                           sigma2, data.n, degenerate, notes)


def standard_errors(V, sigma2, n):
    return np.sqrt(np.diag(covariance(V, sigma2, n)))


def fitted_curve(kernel, fit, x):
    return forward_eval(kernel, fit.step(), x)


__all__ = ["nu_vector", "v_matrix", "estimate_sigma2", "normal_quantile", "covariance",
           "confidence_intervals", "InferenceReport", "infer", "standard_errors",
           "fitted_curve"]
