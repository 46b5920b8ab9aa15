"""Design points, the forward operator on step functions, and data simulation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError
from .kernels import Kernel, delta_phi
from .signal import StepFunction


@dataclass(frozen=True)
class Density:
    """Piecewise-linear design density on [0, 1] (uniform is the one-piece flat case)."""

    knots: tuple = (0.0, 1.0)
    values: tuple = (1.0, 1.0)

    def __post_init__(self):
        knots = tuple(float(v) for v in self.knots)
        values = tuple(float(v) for v in self.values)
        if len(knots) != len(values) or len(knots) < 2:
            raise ContractError("density needs matching knots and values (>= 2)")
        if knots[0] != 0.0 or knots[-1] != 1.0 or any(
                b <= a for a, b in zip(knots[:-1], knots[1:])):
            raise ContractError("density knots must increase from 0 to 1")
        if min(values) <= 0.0:
            raise ContractError("density must be bounded away from zero")
        mass = float(np.sum(np.diff(knots) * (np.array(values[:-1]) + values[1:]) / 2))
        if abs(mass - 1.0) > 1e-12:
            raise ContractError(f"density integrates to {mass}, not 1")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls):
        return cls()

    @classmethod
    def linear(cls, c_l, c_u):
        """h(x) = c_l + (c_u - c_l) x; normalisation forces c_l + c_u = 2."""
        return cls((0.0, 1.0), (c_l, c_u))

    @property
    def c_l(self):
        return min(self.values)

    @property
    def c_u(self):
        return max(self.values)

    @property
    def is_uniform(self):
        return all(v == 1.0 for v in self.values)

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    def _segments(self):
        k = np.asarray(self.knots)
        v = np.asarray(self.values)
        slopes = np.diff(v) / np.diff(k)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(k) * (v[:-1] + v[1:]) / 2)])
        return k, v, slopes, cum

    def cdf(self, x):
        k, v, s, cum = self._segments()
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        i = np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(s) - 1)
        d = x - k[i]
        return cum[i] + v[i] * d + 0.5 * s[i] * d * d

    def ppf(self, u):
        """Inverse of the cumulative design distribution H."""
        k, v, s, cum = self._segments()
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(s) - 1)
        r = u - cum[i]
        # Root of s/2 d^2 + v d - r = 0 in cancellation-free form.
        d = 2.0 * r / (v[i] + np.sqrt(np.maximum(v[i] ** 2 + 2.0 * s[i] * r, 0.0)))
        return np.minimum(k[i] + d, k[i + 1])

    def to_config(self):
        if self.is_uniform:
            return {"density": "uniform"}
        return {"density": "piecewise_linear", "knots": list(self.knots),
                "values": list(self.values)}

    @classmethod
    def from_config(cls, cfg):
        name = cfg.get("density", "uniform")
        if name == "uniform":
            return cls.uniform()
        if name == "linear":
            return cls.linear(cfg["c_l"], cfg["c_u"])
        if name == "piecewise_linear":
            return cls(tuple(cfg["knots"]), tuple(cfg["values"]))
        raise ConfigError(f"unknown design density {name!r}")


@dataclass(frozen=True)
class DesignSpec:
    kind: str = "fixed"
    density: Density = field(default_factory=Density)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("fixed", "random"):
            raise ContractError("design kind must be 'fixed' or 'random'")

    def to_config(self):
        out = {"kind": self.kind, **self.density.to_config()}
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_config(cls, cfg):
        if isinstance(cfg, str):
            cfg = {"density": cfg}
        seed = cfg.get("seed")
        return cls(cfg.get("kind", "fixed"), Density.from_config(cfg),
                   None if seed is None else int(seed))


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    truth: Optional[StepFunction] = None
    noise_sd: Optional[float] = None
    seed: Optional[int] = None
    kernel: Optional[Kernel] = None
    design: Optional[DesignSpec] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ContractError("x and y must be 1-D arrays of equal length")
        if np.any(np.diff(self.x) < 0):
            raise ContractError("design points must be sorted ascending")

    @property
    def n(self):
        return len(self.x)

    def metadata(self):
        meta = {"n": self.n}
        if self.kernel is not None:
            meta["kernel"] = self.kernel.to_config()
        if self.truth is not None:
            meta["k"] = self.truth.k
            meta["theta"] = self.truth.theta.tolist()
            meta["R"] = self.truth.bound if math.isfinite(self.truth.bound) else None
        meta["sigma"] = self.noise_sd
        meta["seed"] = self.seed
        if self.design is not None:
            meta["design"] = self.design.to_config()
        return meta


def generate_design(spec, n):
    """Fixed designs use x_i = H^-1((i - 1/2)/n); random ones draw i.i.d. from h."""
    if n < 1:
        raise ContractError("n must be at least 1")
    if spec.kind == "fixed":
        return spec.density.ppf((np.arange(n) + 0.5) / n)
    rng = np.random.default_rng(spec.seed)
    return np.sort(spec.density.ppf(rng.random(n)))


def forward_eval(kernel, f, x):
    """(Phi f)(x) = sum_j b_j delta_phi(x, tau_{j-1}, tau_j)."""
    x = np.asarray(x, dtype=float)
    edges = np.concatenate([[-np.inf], f.jumps, [np.inf]])
    cols = delta_phi(kernel, x[..., None], edges[:-1], edges[1:])
    out = np.asarray(cols) @ np.asarray(f.levels)
    return float(out) if out.ndim == 0 else out


def simulate_dataset(kernel, f, spec, n, sigma, seed):
    """Draw Y_i = (Phi f)(x_i) + eps_i with Gaussian noise from a seeded generator."""
    if sigma < 0:
        raise ContractError("sigma must be nonnegative")
    if spec.kind == "random" and spec.seed is None:
        # Separate stream from the noise draws.
        design_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
        spec = DesignSpec(spec.kind, spec.density, design_seed)
    x = generate_design(spec, n)
    y = forward_eval(kernel, f, x)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, sigma, size=n)
    return Dataset(x, np.asarray(y, dtype=float), truth=f, noise_sd=float(sigma),
                   seed=seed, kernel=kernel, design=spec)


def empirical_norm(values):
    v = np.asarray(values, dtype=float)
    return float(math.sqrt(np.mean(v * v)))


def empirical_inner(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ContractError("empirical inner product needs equal lengths")
    return float(np.mean(u * v))


# -- files ---------------------------------------------------------------------

def write_csv(dataset, path):
    lines = ["x,y"]
    lines += [f"{float(a)!r},{float(b)!r}" for a, b in zip(dataset.x, dataset.y)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Read an ``x,y`` CSV; rows are sorted by x.  Errors name the bad line."""
    text = Path(path).read_text()
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ConfigError(f"{path}: line 1: empty file, expected header 'x,y'")
    header = [c.strip().lower() for c in rows[0]]
    if header != ["x", "y"]:
        raise ConfigError(f"{path}: line 1: expected header 'x,y', got {rows[0]!r}")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ConfigError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            a, b = float(row[0]), float(row[1])
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: non-numeric value in {row!r}") from None
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ConfigError(f"{path}: line {lineno}: non-finite value")
        xs.append(a)
        ys.append(b)
    if not xs:
        raise ConfigError(f"{path}: no data rows")
    order = np.argsort(xs, kind="stable")
    return Dataset(np.asarray(xs)[order], np.asarray(ys)[order])


def write_metadata(dataset, path):
    Path(path).write_text(json.dumps(dataset.metadata(), indent=2, sort_keys=True) + "\n")


def read_metadata(path):
    meta = json.loads(Path(path).read_text())
    out = dict(meta)
    if "kernel" in meta:
        out["kernel"] = Kernel.from_config(meta["kernel"])
    if meta.get("theta") is not None:
        bound = meta.get("R") or math.inf
        out["truth"] = StepFunction.from_theta(meta["theta"], bound=bound)
    return out


def nu_matrix(kernel, levels, jumps, x):
    """Rows nu(x_i): partial masses at even columns, height-weighted phi(x - tau) at odd.

    Column order follows the interleaved parameter vector, so row ``i`` is the
    gradient of ``(Phi f)(x_i)`` with respect to (b_1, tau_1, ..., b_{k+1}).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    levels = np.asarray(levels, dtype=float)
    jumps = np.asarray(jumps, dtype=float)
    k = len(jumps)
    edges = np.concatenate([[-np.inf], jumps, [np.inf]])
    out = np.empty((len(x), 2 * k + 1))
    out[:, 0::2] = delta_phi(kernel, x[:, None], edges[None, :-1], edges[None, 1:])
    if k:
        out[:, 1::2] = (levels[:-1] - levels[1:])[None, :] * kernel(x[:, None] - jumps[None, :])
    return out
