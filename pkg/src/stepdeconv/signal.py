"""Step functions on the real line with jumps inside (0, 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function ``sum_i b_i 1[tau_{i-1}, tau_i)``.

    ``levels`` has one more entry than ``jumps``.  Adjacent equal levels are
    merged on construction, so ``k`` always counts genuine jumps.
    """

    levels: tuple
    jumps: tuple = ()
    bound: float = math.inf

    def __post_init__(self):
        levels = tuple(float(b) for b in np.atleast_1d(self.levels))
        jumps = tuple(float(t) for t in np.atleast_1d(self.jumps)) if len(
            np.atleast_1d(self.jumps)) else ()
        if len(levels) != len(jumps) + 1:
            raise ContractError("need exactly one more level than jumps")
        if any(not (0.0 < t < 1.0) for t in jumps):
            raise ContractError("jumps must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(jumps[:-1], jumps[1:])):
            raise ContractError("jumps must be strictly increasing")
        if not all(math.isfinite(b) for b in levels):
            raise ContractError("levels must be finite")
        if self.bound <= 0:
            raise ContractError("bound R must be positive")
        if max(abs(b) for b in levels) >= self.bound:
            raise ContractError(f"levels exceed the sup-norm bound R={self.bound}")
        keep_levels = [levels[0]]
        keep_jumps = []
        for t, b in zip(jumps, levels[1:]):
            if b != keep_levels[-1]:
                keep_jumps.append(t)
                keep_levels.append(b)
        object.__setattr__(self, "levels", tuple(keep_levels))
        object.__setattr__(self, "jumps", tuple(keep_jumps))
        object.__setattr__(self, "bound", float(self.bound))

    @property
    def k(self):
        return len(self.jumps)

    @property
    def theta(self):
        """Interleaved parameter vector (b_1, tau_1, b_2, ..., tau_k, b_{k+1})."""
        out = np.empty(2 * self.k + 1)
        out[0::2] = self.levels
        out[1::2] = self.jumps
        return out

    @classmethod
    def from_theta(cls, theta, bound=math.inf):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or len(theta) % 2 != 1:
            raise ContractError("theta must have odd length 2k+1")
        return cls(tuple(theta[0::2]), tuple(theta[1::2]), bound)

    def to_record(self):
        """Flat record: k, then theta, then R."""
        return [self.k, *self.theta.tolist(), self.bound]

    @classmethod
    def from_record(cls, record):
        k = int(record[0])
        if len(record) != 2 * k + 3:
            raise ContractError("record length does not match its jump count")
        return cls.from_theta(record[1:-1], bound=float(record[-1]))

    @property
    def jump_heights(self):
        return np.diff(self.levels)

    @property
    def min_jump_height(self):
        if not self.k:
            return math.inf
        return float(np.min(np.abs(self.jump_heights)))

    @property
    def sup_norm(self):
        return max(abs(b) for b in self.levels)

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(f, x):
    """Right-continuous evaluation: b_i on [tau_{i-1}, tau_i)."""
    idx = np.searchsorted(np.asarray(f.jumps), np.asarray(x, dtype=float), side="right")
    out = np.asarray(f.levels)[idx]
    return float(out) if out.ndim == 0 else out


def jump_set(f):
    return frozenset(f.jumps)


def jump_count(f):
    """J_#(f) = number of jumps + 1."""
    return f.k + 1


def hausdorff_jump_distance(f, g):
    """Hausdorff distance between jump sets; +inf if either side has no jumps."""
    a = np.asarray(f.jumps)
    b = np.asarray(g.jumps)
    if a.size == 0 or b.size == 0:
        return math.inf
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def l2_distance(f, g, interval=(0.0, 1.0)):
    """Exact L2 norm of f - g over a finite interval."""
    lo, hi = (float(v) for v in interval)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ContractError("interval must be finite with lo < hi")
    cuts = np.unique(np.concatenate([[lo, hi], [t for t in f.jumps + g.jumps
                                                if lo < t < hi]]))
    left = cuts[:-1]
    diff = evaluate(f, left) - evaluate(g, left)
    return float(math.sqrt(np.sum(np.diff(cuts) * np.asarray(diff) ** 2)))
