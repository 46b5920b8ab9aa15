"""Restricted and penalized least-squares fits of step functions.

Heights enter linearly, so for fixed jump locations they are profiled out by
an orthogonal factorization.  Jump locations are found by a global search over
a coarse grid followed by local continuous refinement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ContractError, DegenerateFitError, EstimationError
from .kernels import delta_phi
from .model import nu_matrix
from .signal import StepFunction

DEFAULT_R = 1e3
_RANK_RTOL = 1e-10
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FitConfig:
    """Tuning knobs for :func:`fit_known_k` and :func:`fit_penalized`.

    ``grid_points=None`` means ``ceil(4 sqrt(n))``.  ``lam=None`` lets
    :func:`fit_penalized` pick the penalty via :func:`select_lambda` with
    ``c = 0.5 * sigma0^2`` unless ``c`` is given.
    """

    R: float = DEFAULT_R
    grid_points: Optional[int] = None
    refine: bool = True
    refine_tol: float = 1e-7
    max_refine_iters: int = 100
    k: Optional[int] = None
    k_max: int = 4
    lam: Optional[float] = None
    epsilon: float = 0.5
    c: Optional[float] = None
    exhaustive_budget: int = 200_000
    n_starts: int = 5

    def __post_init__(self):
        if not self.R > 0:
            raise ContractError("R must be positive")
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")
        if self.lam is not None and self.lam < 0:
            raise ContractError("lambda must be nonnegative")
        if self.k is not None and self.k < 0:
            raise ContractError("k must be nonnegative")
        if self.k_max < 0:
            raise ContractError("k_max must be nonnegative")
        if self.grid_points is not None and self.grid_points < (self.k or 0) + 1:
            raise ContractError("grid_points must be at least k + 1")

    def grid_size(self, n):
        if self.grid_points is not None:
            return int(self.grid_points)
        return max(int(math.ceil(4.0 * math.sqrt(n))), 1)


@dataclass
class HeightsFit:
    levels: np.ndarray
    rss: float
    clipped: bool = False


@dataclass
class FitResult:
    theta_hat: np.ndarray
    k_hat: int
    objective: float
    penalized_objective: float
    sigma2_hat: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def levels(self):
        return self.theta_hat[0::2]

    @property
    def jumps(self):
        return self.theta_hat[1::2]

    def step(self, bound=math.inf):
        return StepFunction.from_theta(self.theta_hat, bound=bound)

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.tolist(),
            "k_hat": self.k_hat,
            "objective": self.objective,
            "penalized_objective": self.penalized_objective,
            "sigma2_hat": self.sigma2_hat,
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# -- inner linear problem -----------------------------------------------------

def height_design(kernel, x, taus):
    """n x (k+1) matrix with entries delta_phi(x_i, tau_{j-1}, tau_j)."""
    edges = np.concatenate([[-np.inf], np.asarray(taus, dtype=float), [np.inf]])
    return np.asarray(delta_phi(kernel, np.asarray(x)[:, None], edges[None, :-1],
                                edges[None, 1:]))


def _check_taus(taus):
    taus = np.asarray(taus, dtype=float).reshape(-1)
    if np.any((taus <= 0.0) | (taus >= 1.0)):
        raise ContractError("jump locations must lie strictly inside (0, 1)")
    if np.any(np.diff(taus) <= 0.0):
        raise ContractError("jump locations must be strictly increasing")
    return taus


def heights_given_jumps(data, kernel, taus, R=DEFAULT_R):
    """Least-squares levels for fixed jumps, via pivoted QR.

    When the unconstrained solution leaves the box |b| < R the levels are
    re-solved as a bound-constrained least-squares problem and ``clipped`` is
    set.  Raises :class:`DegenerateFitError` when the design matrix is rank
    deficient.
    """
    taus = _check_taus(taus)
    A = height_design(kernel, data.x, taus)
    q, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0 or np.any(diag < _RANK_RTOL * diag[0]):
        raise DegenerateFitError(f"height design is rank deficient for jumps {taus}")
    coef = scipy.linalg.solve_triangular(r, q.T @ data.y)
    levels = np.empty_like(coef)
    levels[piv] = coef
    clipped = bool(np.any(np.abs(levels) >= R))
    if clipped:
        inside = np.nextafter(R, 0.0)
        levels = scipy.optimize.lsq_linear(A, data.y, bounds=(-inside, inside),
                                           method="bvls").x
        levels = np.clip(levels, -inside, inside)
    resid = A @ levels - data.y
    return HeightsFit(levels, float(np.mean(resid * resid)), clipped)


# -- global search over grid placements ---------------------------------------

class _GridSearch:
    """Fast residual sums of squares for jump sets drawn from candidate positions.

    The fitted curve for jumps S lies in span{1, F(x - t) : t in S}; with
    centred, normalised columns the profile rss is var(y) - r_S' G_SS^-1 r_S.
    """

    def __init__(self, data, kernel, positions):
        self.positions = np.asarray(positions, dtype=float)
        x, y = data.x, data.y
        n = len(x)
        self.n = n
        cols = kernel.cdf(x[:, None] - self.positions[None, :])
        yc = y - y.mean()
        self.vy = float(np.mean(yc * yc))
        z = cols - cols.mean(axis=0)
        scale = np.sqrt(np.mean(z * z, axis=0))
        self.valid = scale > 1e-12 * max(float(scale.max(initial=0.0)), 1e-300)
        z[:, self.valid] /= scale[self.valid]
        z[:, ~self.valid] = 0.0
        self._z = z
        self.r = z.T @ yc / n
        self._gram = None

    @property
    def gram(self):
        if self._gram is None:
            self._gram = self._z.T @ self._z / self.n
        return self._gram

    def rss_single(self):
        return np.where(self.valid, self.vy - self.r ** 2, np.inf)

    def rss_sets(self, idx):
        idx = np.asarray(idx, dtype=int)
        m, s = idx.shape
        if s == 0:
            return np.full(m, self.vy)
        if s == 1:
            return self.rss_single()[idx[:, 0]]
        g = self.gram[idx[:, :, None], idx[:, None, :]]
        rr = self.r[idx]
        ok = np.all(self.valid[idx], axis=1)
        ok &= np.linalg.eigvalsh(g)[:, 0] > 1e-10
        out = np.full(m, np.inf)
        if np.any(ok):
            sol = np.linalg.solve(g[ok], rr[ok][:, :, None])[:, :, 0]
            out[ok] = self.vy - np.sum(rr[ok] * sol, axis=1)
        out[~np.isfinite(out)] = np.inf
        return out

    def exhaustive(self, kk, chunk=50_000):
        combos = np.array(list(itertools.combinations(range(len(self.positions)), kk)),
                          dtype=int).reshape(-1, kk)
        rss = np.concatenate([self.rss_sets(combos[i:i + chunk])
                              for i in range(0, len(combos), chunk)]) if len(combos) else np.empty(0)
        return combos, rss

    def greedy(self, kk, starts):
        n_pos = len(self.positions)
        results = []
        for start in starts:
            S = sorted(set(int(s) for s in start))[:kk]
            while len(S) < kk:
                cand = [g for g in range(n_pos) if g not in S]
                if not cand:
                    break
                sets = np.sort(np.array([S + [g] for g in cand]), axis=1)
                rss = self.rss_sets(sets)
                i = int(np.argmin(rss))
                if not np.isfinite(rss[i]):
                    break
                S = sets[i].tolist()
            if len(S) < kk:
                continue
            cur = float(self.rss_sets(np.array([S]))[0])
            for _ in range(50):
                improved = False
                for j in range(kk):
                    lo = S[j - 1] + 1 if j > 0 else 0
                    hi = S[j + 1] if j < kk - 1 else n_pos
                    moves = [g for g in range(lo, hi) if g != S[j]]
                    if not moves:
                        continue
                    sets = np.array([S[:j] + [g] + S[j + 1:] for g in moves])
                    rss = self.rss_sets(sets)
                    i = int(np.argmin(rss))
                    if rss[i] < cur:
                        S, cur, improved = sets[i].tolist(), float(rss[i]), True
                if not improved:
                    break
            results.append((cur, S))
        return results


def _pick_exact(data, kernel, R, search, sets, rss_fast, window=1e-9):
    """Re-score fast candidates with the exact bounded profile.

    The fast score ignores the level bound R, so it is a lower bound on the
    exact rss: candidates are visited in fast order until the next bound
    exceeds the best exact rss found.  Returns (taus, HeightsFit, index into
    ``sets``); among exactly tied candidates the lowest index wins.
    """
    order = np.lexsort((np.arange(len(rss_fast)), rss_fast))
    finite = order[np.isfinite(rss_fast[order])]
    slack = window * max(float(np.mean(data.y ** 2)), 1e-300)
    best = None
    for i in finite:
        if best is not None and rss_fast[i] > best[1].rss + slack:
            break
        taus = search.positions[sets[i]]
        try:
            hf = heights_given_jumps(data, kernel, taus, R)
        except DegenerateFitError:
            continue
        if best is None or hf.rss < best[1].rss or (hf.rss == best[1].rss and i < best[2]):
            best = (taus, hf, int(i))
    if best is None:
        raise EstimationError("every candidate jump placement is degenerate")
    return best


def jump_grid(data, n_points):
    """Equispaced candidate jump locations strictly inside [x_(1), x_(n)]."""
    lo, hi = float(data.x[0]), float(data.x[-1])
    if not hi > lo:
        raise ContractError("design needs at least two distinct points")
    grid = lo + (np.arange(n_points) + 0.5) * (hi - lo) / n_points
    return np.clip(grid, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


# -- local refinement ---------------------------------------------------------

def _line_profile(data, kernel, taus, j):
    """Unclipped profile rss as a vectorized function of tau_j, other jumps fixed."""
    x, y = data.x, data.y
    others = np.delete(np.asarray(taus, dtype=float), j)
    basis = np.column_stack([np.ones_like(x)] + [kernel.cdf(x - t) for t in others])
    q, _ = np.linalg.qr(basis)
    yp = y - q @ (q.T @ y)
    yy = float(yp @ yp)

    def rss(cand):
        cols = kernel.cdf(x[:, None] - np.asarray(cand, dtype=float)[None, :])
        cp = cols - q @ (q.T @ cols)
        nrm = np.sum(cp * cp, axis=0)
        proj = cp.T @ yp
        big = max(float(np.max(nrm, initial=0.0)), 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (yy - proj ** 2 / nrm) / len(x)
        return np.where(nrm > 1e-20 * big, out, np.inf)

    return rss


def _line_rss(data, kernel, taus, j, cand):
    return _line_profile(data, kernel, taus, j)(cand)


def _golden_many(fun, a, b, tol):
    """Independent golden-section searches on the intervals [a_i, b_i], evaluated jointly."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while np.max(b - a) > tol:
        left = fc <= fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c, d, fc, fd = (np.where(left, b - _GOLDEN * (b - a), d),
                        np.where(left, c, a + _GOLDEN * (b - a)),
                        np.where(left, fc, fd), np.where(left, fc, fd))
        x = np.where(left, c, d)
        fx = fun(x)
        fc = np.where(left, fx, fc)
        fd = np.where(left, fd, fx)
    pick = fc <= fd
    return np.where(pick, c, d), np.where(pick, fc, fd)


def _refine_scan(data, kernel, taus, cfg, spacing, lo_b, hi_b, per_cell=8):
    """Coordinate search for kernels with jumps.

    The profile is only piecewise smooth (cusps where tau crosses x_i - s for a
    kernel jump s), so every cell between consecutive cusps within two grid
    spacings is sampled and then golden-searched around its best sample.
    """
    taus = np.array(taus, dtype=float)
    k = len(taus)
    sep = max(1e-12, 1e-9 * (hi_b - lo_b))
    kinks = np.unique(np.concatenate([data.x - s for s in kernel.jumps])) if kernel.jumps else np.empty(0)
    frac = np.arange(per_cell + 1) / per_cell
    iters = 0
    for iters in range(1, cfg.max_refine_iters + 1):
        max_move = 0.0
        for j in range(k):
            left = max(lo_b, taus[j] - 2.0 * spacing, taus[j - 1] + sep if j > 0 else -np.inf)
            right = min(hi_b, taus[j] + 2.0 * spacing, taus[j + 1] - sep if j < k - 1 else np.inf)
            if not right > left:
                continue
            profile = _line_profile(data, kernel, taus, j)
            inner = kinks[(kinks > left) & (kinks < right)]
            pts = np.unique(np.concatenate([[left, right], inner]))
            lo, hi = pts[:-1], pts[1:]
            samples = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
            vals = profile(samples.ravel()).reshape(samples.shape)
            i = np.argmin(vals, axis=1)
            rows = np.arange(len(lo))
            step = (hi - lo) / per_cell
            a = np.maximum(samples[rows, i] - step, lo)
            b = np.minimum(samples[rows, i] + step, hi)
            t, r = _golden_many(profile, a, b, 1e-3 * cfg.refine_tol)
            cand = np.concatenate([t, samples[rows, i]])
            rss = np.concatenate([r, vals[rows, i]])
            m = int(np.argmin(rss))
            cur_r = float(profile([taus[j]])[0])
            if rss[m] < cur_r:
                max_move = max(max_move, abs(cand[m] - taus[j]))
                taus[j] = cand[m]
        if max_move < cfg.refine_tol:
            break
    return taus, iters


def _refine_smooth(data, kernel, taus, cfg, R, lo_b, hi_b):
    """Gauss-Newton on the full parameter vector with nu rows as the Jacobian;
    only the jump part of the step is kept and heights are re-profiled."""
    taus = np.array(taus, dtype=float)
    hf = heights_given_jumps(data, kernel, taus, R)
    iters = 0
    for iters in range(1, cfg.max_refine_iters + 1):
        jac = nu_matrix(kernel, hf.levels, taus, data.x)
        resid = jac[:, 0::2] @ hf.levels - data.y
        step = np.linalg.lstsq(jac, -resid, rcond=None)[0][1::2]
        s = 1.0
        accepted = None
        while s >= 2.0 ** -20:
            new = np.clip(taus + s * step, lo_b, hi_b)
            if np.all(np.diff(new) > 0):
                try:
                    cand = heights_given_jumps(data, kernel, new, R)
                except DegenerateFitError:
                    cand = None
                if cand is not None and cand.rss < hf.rss:
                    accepted = (new, cand)
                    break
            s *= 0.5
        if accepted is None:
            break
        move = float(np.max(np.abs(accepted[0] - taus)))
        taus, hf = accepted
        if move < cfg.refine_tol:
            break
    return taus, iters


# -- public fitting API -------------------------------------------------------

def _assemble(data, kk, taus, hf, diagnostics):
    theta = np.empty(2 * kk + 1)
    theta[0::2] = hf.levels
    theta[1::2] = taus
    dof = data.n - (2 * kk + 1)
    sigma2 = data.n * hf.rss / dof if dof > 0 else math.nan
    return FitResult(theta, kk, hf.rss, hf.rss, sigma2, diagnostics)


def fit_known_k(data, kernel, kk, cfg=None, warm_start=None):
    """Approximate least-squares fit over step functions with exactly ``kk`` jumps.

    ``warm_start`` (continuous jump locations, typically from a fit with
    fewer jumps) is added to the candidate positions, so extending it by one
    grid jump is always among the placements considered.
    """
    cfg = cfg or FitConfig()
    if kk < 0:
        raise ContractError("number of jumps must be nonnegative")
    if data.n < 2 * kk + 1:
        raise ContractError(f"n = {data.n} is too small for {kk} jumps")
    if kk == 0:
        hf = heights_given_jumps(data, kernel, [], cfg.R)
        return _assemble(data, 0, np.empty(0), hf, {
            "grid_optimum": hf.rss, "refine_iters": 0, "boundary_clipped": False,
            "levels_clipped": hf.clipped})

    n_grid = cfg.grid_size(data.n)
    if n_grid < kk:
        raise ContractError("grid_points must be at least k")
    grid = jump_grid(data, n_grid)
    positions = grid
    if warm_start is not None and len(warm_start):
        positions = np.unique(np.concatenate([grid, np.asarray(warm_start, float)]))
    search = _GridSearch(data, kernel, positions)

    if kk <= 2 or math.comb(len(positions), kk) <= cfg.exhaustive_budget:
        sets, rss = search.exhaustive(kk)
        taus, hf, _ = _pick_exact(data, kernel, cfg.R, search, sets, rss)
        strategy = "exhaustive"
    else:
        single = search.rss_single()
        order = np.lexsort((np.arange(len(single)), single))
        starts = [[int(g)] for g in order[:cfg.n_starts] if np.isfinite(single[g])]
        if warm_start is not None and len(warm_start):
            starts.append([int(np.searchsorted(positions, t)) for t in warm_start])
        found = search.greedy(kk, starts)
        if not found:
            raise EstimationError("greedy search found no feasible jump placement")
        sets = np.array([S for _, S in found])
        rss = np.array([r for r, _ in found])
        taus, hf, _ = _pick_exact(data, kernel, cfg.R, search, sets, rss, window=np.inf)
        strategy = "greedy"

    grid_optimum = hf.rss
    iters = 0
    lo_b, hi_b = float(data.x[0]), float(data.x[-1])
    if cfg.refine:
        spacing = (hi_b - lo_b) / n_grid
        try:
            if kernel.continuous:
                new, iters = _refine_smooth(data, kernel, taus, cfg, cfg.R, lo_b, hi_b)
            else:
                new, iters = _refine_scan(data, kernel, taus, cfg, spacing, lo_b, hi_b)
            refined = heights_given_jumps(data, kernel, new, cfg.R)
            if refined.rss <= hf.rss:
                taus, hf = new, refined
        except DegenerateFitError:
            pass
    clipped = bool(np.any((taus <= lo_b) | (taus >= hi_b)))
    return _assemble(data, kk, np.asarray(taus, dtype=float), hf, {
        "grid_optimum": grid_optimum, "refine_iters": iters,
        "boundary_clipped": clipped, "levels_clipped": hf.clipped,
        "search": strategy, "grid_points": n_grid})


def difference_variance(y):
    """First-difference noise variance estimate sum (y_{i+1} - y_i)^2 / (2(n - 1))."""
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ContractError("need at least two observations")
    d = np.diff(y)
    return float(np.sum(d * d) / (2.0 * (len(y) - 1)))


def select_lambda(n, epsilon=0.5, c=1.0):
    """Penalty c log(n) n^(-1/(1+epsilon)); tends to 0 while lambda n^(1/(1+eps)) grows."""
    if n < 2:
        raise ContractError("select_lambda needs n >= 2")
    if not (epsilon > 0 and c > 0):
        raise ContractError("epsilon and c must be positive")
    return c * math.log(n) * n ** (-1.0 / (1.0 + epsilon))


def default_lambda(data, cfg):
    if cfg.lam is not None:
        return float(cfg.lam)
    c = cfg.c if cfg.c is not None else 0.5 * difference_variance(data.y)
    if c <= 0:
        return 0.0
    return select_lambda(data.n, cfg.epsilon, c)


def fit_penalized(data, kernel, cfg=None):
    """Minimise rss + lambda * (k + 1) over k = 0..k_max; ties go to fewer jumps."""
    cfg = cfg or FitConfig()
    lam = default_lambda(data, cfg)
    best = None
    per_k = {}
    warm = None
    for kk in range(cfg.k_max + 1):
        if data.n < 2 * kk + 1:
            break
        try:
            fit = fit_known_k(data, kernel, kk, cfg, warm_start=warm)
        except EstimationError:
            continue
        warm = fit.jumps.copy()
        pen = fit.objective + lam * (kk + 1)
        per_k[kk] = {"objective": fit.objective, "penalized_objective": pen}
        fit.penalized_objective = pen
        if best is None or pen < best.penalized_objective:
            best = fit
    if best is None:
        raise EstimationError("no jump count could be fitted")
    best.diagnostics = dict(best.diagnostics, **{"lambda": lam, "per_k": per_k})
    return best
