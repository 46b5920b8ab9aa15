"""Convolution kernel registry and the partial-mass primitive.

Every kernel carries a closed-form cumulative mass ``F(u) = int_{-inf}^u phi``,
so that ``delta_phi(x, a, b) = int_a^b phi(x - y) dy = F(x - a) - F(x - b)``.
An independent quadrature route is kept for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from . import quadrature
from .errors import ContractError, KernelDomainError

FAMILIES = ("gaussian", "laplace", "boxcar", "polynomial", "tent_power", "abel")
_ALIASES = {"gauss": "gaussian", "tentpower": "tent_power", "tent": "tent_power",
            "poly": "polynomial"}
_SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class Kernel:
    """A named kernel family.

    ``p`` is the integer degree for ``polynomial`` (x^p on [0, 1]) and
    ``tent_power`` ((1 - |x|)_+^p); ``alpha`` is the Abel exponent.  The Abel
    kernel x^-alpha is truncated to (0, 1] so that its mass is finite.
    """

    family: str
    p: Optional[int] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        fam = _ALIASES.get(self.family.lower(), self.family.lower())
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}")
        if fam == "polynomial":
            if self.p is None or int(self.p) != self.p or self.p < 0:
                raise ContractError("polynomial kernel needs an integer degree p >= 0")
            object.__setattr__(self, "p", int(self.p))
        elif fam == "tent_power":
            if self.p is None or int(self.p) != self.p or self.p < 2:
                raise ContractError("tent_power kernel needs an integer p >= 2")
            object.__setattr__(self, "p", int(self.p))
        elif self.p is not None:
            raise ContractError(f"{fam} kernel takes no degree")
        if fam == "abel":
            if self.alpha is None or not (0.5 < float(self.alpha) < 1.0):
                raise ContractError("abel kernel needs alpha strictly inside (1/2, 1)")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ContractError(f"{fam} kernel takes no alpha")

    # -- constructors -------------------------------------------------------

    @classmethod
    def gaussian(cls):
        return cls("gaussian")

    @classmethod
    def laplace(cls):
        return cls("laplace")

    @classmethod
    def boxcar(cls):
        return cls("boxcar")

    @classmethod
    def polynomial(cls, p):
        return cls("polynomial", p=p)

    @classmethod
    def tent_power(cls, p):
        return cls("tent_power", p=p)

    @classmethod
    def abel(cls, alpha):
        return cls("abel", alpha=alpha)

    @classmethod
    def from_config(cls, cfg):
        """Build from a mapping such as ``{"kernel": "abel", "alpha": 0.75}``."""
        name = cfg.get("kernel", cfg.get("family"))
        if name is None:
            raise ContractError("kernel name missing from config")
        return cls(str(name), p=cfg.get("p"), alpha=cfg.get("alpha"))

    def to_config(self):
        out = {"kernel": self.family}
        if self.p is not None:
            out["p"] = self.p
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    # -- analytic properties ------------------------------------------------

    @property
    def total_mass(self):
        fam = self.family
        if fam in ("gaussian", "laplace", "boxcar"):
            return 1.0
        if fam == "polynomial":
            return 1.0 / (self.p + 1)
        if fam == "tent_power":
            return 2.0 / (self.p + 1)
        return 1.0 / (1.0 - self.alpha)

    @property
    def sup_bound(self):
        fam = self.family
        if fam == "gaussian":
            return 1.0 / _SQRT_2PI
        if fam == "laplace":
            return 0.5
        if fam == "abel":
            return math.inf
        return 1.0

    @property
    def bounded(self):
        return self.family != "abel"

    @property
    def support(self):
        fam = self.family
        if fam in ("gaussian", "laplace"):
            return (-math.inf, math.inf)
        if fam == "tent_power":
            return (-1.0, 1.0)
        return (0.0, 1.0)

    @property
    def jumps(self):
        """Points where phi is discontinuous (the Abel pole included)."""
        fam = self.family
        if fam == "boxcar" or (fam == "polynomial" and self.p == 0):
            return (0.0, 1.0)
        if fam == "polynomial":
            return (1.0,)
        if fam == "abel":
            return (0.0, 1.0)
        return ()

    @property
    def kinks(self):
        """Every point where phi is not smooth; used as quadrature breakpoints."""
        fam = self.family
        if fam == "laplace":
            return (0.0,)
        if fam == "tent_power":
            return (-1.0, 0.0, 1.0)
        if fam == "gaussian":
            return ()
        return (0.0, 1.0)

    @property
    def continuous(self):
        return not self.jumps

    @property
    def symmetric(self):
        return self.family in ("gaussian", "laplace", "tent_power")

    def truncation(self, tol=DEFAULT_QUAD_TOL):
        """Finite [lo, hi] outside of which phi carries less than ``tol`` mass."""
        if self.family == "gaussian":
            t = -float(ndtri(tol / 4.0))
            return (-t, t)
        if self.family == "laplace":
            t = math.log(2.0 / tol)
            return (-t, t)
        return self.support

    # -- evaluation ---------------------------------------------------------

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        fam = self.family
        if fam == "gaussian":
            return np.exp(-0.5 * u * u) / _SQRT_2PI
        if fam == "laplace":
            return 0.5 * np.exp(-np.abs(u))
        if fam == "boxcar":
            return ((u >= 0.0) & (u <= 1.0)).astype(float)
        if fam == "polynomial":
            inside = (u >= 0.0) & (u <= 1.0)
            return np.where(inside, np.clip(u, 0.0, 1.0) ** self.p, 0.0)
        if fam == "tent_power":
            return np.clip(1.0 - np.abs(u), 0.0, None) ** self.p
        if np.any(u == 0.0):
            raise KernelDomainError("abel kernel has a pole at 0")
        inside = (u > 0.0) & (u <= 1.0)
        return np.where(inside, np.clip(u, 1e-300, 1.0) ** -self.alpha, 0.0)

    def cdf(self, u):
        """Cumulative mass F(u) = int_{-inf}^u phi(s) ds."""
        u = np.asarray(u, dtype=float)
        fam = self.family
        if fam == "gaussian":
            return ndtr(u)
        if fam == "laplace":
            neg = 0.5 * np.exp(np.minimum(u, 0.0))
            pos = 1.0 - 0.5 * np.exp(-np.maximum(u, 0.0))
            return np.where(u < 0.0, neg, pos)
        if fam == "boxcar":
            return np.clip(u, 0.0, 1.0)
        if fam == "polynomial":
            return np.clip(u, 0.0, 1.0) ** (self.p + 1) / (self.p + 1)
        if fam == "tent_power":
            q = self.p + 1
            c = np.clip(u, -1.0, 1.0)
            left = (1.0 + np.minimum(c, 0.0)) ** q / q
            right = 2.0 / q - (1.0 - np.maximum(c, 0.0)) ** q / q
            return np.where(c < 0.0, left, right)
        q = 1.0 - self.alpha
        return np.clip(u, 0.0, 1.0) ** q / q

    def sf(self, u):
        """Upper-tail mass M - F(u), accurate in the right tail."""
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            return ndtr(-u)
        if self.family == "laplace":
            return self.cdf(-u)
        return self.total_mass - self.cdf(u)


def eval_kernel(kernel, x):
    """phi(x); raises :class:`KernelDomainError` at the Abel pole."""
    out = kernel(x)
    return float(out) if np.ndim(out) == 0 else out


def delta_phi(kernel, x, a, b, method="closed", quad_tol=DEFAULT_QUAD_TOL):
    """Oriented partial mass ``int_a^b phi(x - y) dy``; ``phi(x - a)`` when a == b.

    ``x``, ``a`` and ``b`` broadcast against each other and may be +-inf
    (endpoints only).  ``method="quad"`` evaluates the same quantity by
    adaptive quadrature, one triple at a time.
    """
    if method == "quad":
        return _delta_phi_quad_vec(kernel, x, a, b, quad_tol)
    if method != "closed":
        raise ContractError(f"unknown method {method!r}")
    x, a, b = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float),
                                  np.asarray(b, float))
    hi = x - a
    lo = x - b
    with np.errstate(invalid="ignore"):
        right_tail = (lo > 0.0) & (hi > 0.0)
        diff = np.where(right_tail, kernel.sf(lo) - kernel.sf(hi),
                        kernel.cdf(hi) - kernel.cdf(lo))
    same = a == b
    if np.any(same):
        diff = np.where(same, _phi_safe(kernel, np.where(same, x - a, 0.5), same), diff)
    return float(diff) if diff.ndim == 0 else diff


def _phi_safe(kernel, u, mask):
    if kernel.family == "abel" and np.any((u == 0.0) & mask):
        raise KernelDomainError("abel kernel has a pole at 0")
    if kernel.family == "abel":
        u = np.where(mask, u, 0.5)
    return kernel(u)


def _delta_phi_quad_vec(kernel, x, a, b, tol):
    x, a, b = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float),
                                  np.asarray(b, float))
    out = np.empty(x.shape)
    for idx in np.ndindex(x.shape):
        out[idx] = delta_phi_quad(kernel, x[idx], a[idx], b[idx], tol)
    return float(out) if out.ndim == 0 else out


def delta_phi_quad(kernel, x, a, b, tol=DEFAULT_QUAD_TOL):
    """Scalar partial mass by adaptive quadrature in u = x - y.

    Infinite endpoints are replaced by the kernel's truncation points, where
    the neglected tail mass is below ``tol``.
    """
    x, a, b = float(x), float(a), float(b)
    if a == b:
        return eval_kernel(kernel, x - a)
    sign = 1.0
    if a > b:
        a, b = b, a
        sign = -1.0
    lo_t, hi_t = kernel.truncation(tol)
    lo = max(x - b, lo_t)
    hi = min(x - a, hi_t)
    if not lo < hi:
        return 0.0
    if kernel.family == "abel" and lo <= 0.0 < hi:
        raise KernelDomainError("abel pole lies inside the quadrature range")
    val = quadrature.integrate(kernel, lo, hi, tol=tol, breakpoints=kernel.kinks)
    return sign * val


@dataclass(frozen=True)
class GramDiagnostic:
    gram: np.ndarray
    min_eigenvalue: float


def gram_matrix(kernel, intervals, quad_tol=DEFAULT_QUAD_TOL):
    """L2([0, 1]) Gram matrix of the functions x -> delta_phi(x, a, b)."""
    intervals = [(float(a), float(b)) for a, b in intervals]
    if kernel.family == "abel" and any(a == b for a, b in intervals):
        raise KernelDomainError("abel point mass phi(x - a) is not square integrable")
    lows = np.array([a for a, _ in intervals])
    highs = np.array([b for _, b in intervals])

    def integrand(xs):
        vals = delta_phi(kernel, xs[:, None], lows[None, :], highs[None, :])
        return vals[:, :, None] * vals[:, None, :]

    ends = [e for pair in intervals for e in pair if np.isfinite(e)]
    breaks = [e + s for e in ends for s in kernel.kinks]
    gram = quadrature.integrate(integrand, 0.0, 1.0, tol=quad_tol, breakpoints=breaks)
    gram = 0.5 * (gram + gram.T)
    return gram


def assumption_b_diagnostic(kernel, taus, quad_tol=DEFAULT_QUAD_TOL):
    """Numerical linear-independence check of the interval images.

    ``taus`` runs from -inf through interior points to +inf; at most two
    consecutive entries may coincide (the pair then contributes
    ``phi(x - tau)``).  A strictly positive smallest eigenvalue of the Gram
    matrix means the functions are numerically independent.
    """
    taus = [float(t) for t in taus]
    if len(taus) < 2 or taus[0] != -math.inf or taus[-1] != math.inf:
        raise ContractError("taus must start at -inf and end at +inf")
    inner = taus[1:-1]
    if any(b < a for a, b in zip(inner[:-1], inner[1:])):
        raise ContractError("taus must be nondecreasing")
    if any(a == b == c for a, b, c in zip(inner[:-2], inner[1:-1], inner[2:])):
        raise ContractError("at most two consecutive taus may coincide")
    intervals = list(zip(taus[:-1], taus[1:]))
    gram = gram_matrix(kernel, intervals, quad_tol)
    return GramDiagnostic(gram=gram, min_eigenvalue=float(np.linalg.eigvalsh(gram)[0]))
