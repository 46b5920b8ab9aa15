"""TOML/JSON configuration files.  Both formats share one schema:

    kernel = "gaussian"          # or a table {family, p, alpha}
    alpha = 0.75                 # abel only
    p = 2                        # polynomial / tent_power only
    theta = [0.0, 0.5, 1.0]      # b_1, tau_1, ..., b_{k+1}
    R = 1000.0
    n = 1000
    sigma = 0.2
    seed = 7

    [design]    kind = "fixed" | "random", density = "uniform" | "linear" | ...
    [fit]       k, k_max, lam, c, epsilon, grid_points, refine, refine_tol, ...
    [experiment] n_grid, reps, seed_base, metric, metrics, band, target, level,
                 n, min_recovery, mean_band, variance_band
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, ContractError
from .estimator import FitConfig
from .kernels import Kernel
from .model import DesignSpec
from .signal import StepFunction

TOP_KEYS = {"name", "kernel", "alpha", "p", "theta", "R", "n", "sigma", "seed",
            "design", "fit", "experiment"}
EXPERIMENT_KEYS = {"n_grid", "reps", "seed_base", "metric", "metrics", "band", "target",
                   "level", "n", "min_recovery", "mean_band", "variance_band"}
FIT_KEYS = {f.name for f in dataclasses.fields(FitConfig)}


def load_config(path):
    """Parse a ``.toml`` or ``.json`` file into a plain dict and check its keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(text)
        else:
            cfg = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    validate(cfg)
    return cfg


def validate(cfg):
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in (("fit", FIT_KEYS), ("experiment", EXPERIMENT_KEYS)):
        extra = set(cfg.get(section, {})) - allowed
        if extra:
            raise ConfigError(f"unknown [{section}] keys: {sorted(extra)}")


def kernel_from(cfg):
    spec = cfg.get("kernel")
    if spec is None:
        raise ConfigError("config must name a kernel")
    if isinstance(spec, dict):
        spec = {"kernel": spec.get("family", spec.get("kernel")), **spec}
    else:
        spec = {"kernel": spec, "p": cfg.get("p"), "alpha": cfg.get("alpha")}
    try:
        return Kernel.from_config(spec)
    except (ContractError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid kernel: {exc}") from None


def truth_from(cfg):
    if "theta" not in cfg:
        raise ConfigError("config must give theta")
    bound = float(cfg.get("R", math.inf))
    try:
        return StepFunction.from_theta(cfg["theta"], bound=bound)
    except (ContractError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid theta: {exc}") from None


def design_from(cfg):
    try:
        return DesignSpec.from_config(cfg.get("design", {}))
    except (ContractError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid design: {exc}") from None


def fit_config_from(cfg, k=None):
    opts = dict(cfg.get("fit", {}))
    if "R" in cfg and "R" not in opts:
        opts["R"] = float(cfg["R"])
    if k is not None:
        opts["k"] = int(k)
    try:
        return FitConfig(**opts)
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"invalid [fit] table: {exc}") from None


def scenario_from(cfg, seed=None):
    from .experiments import Scenario

    exp = cfg.get("experiment", {})
    kwargs = {}
    if "n_grid" in exp:
        kwargs["n_grid"] = tuple(exp["n_grid"])
    elif "n" in exp:
        kwargs["n_grid"] = (int(exp["n"]),)
    for key in ("reps", "seed_base", "metric", "target"):
        if key in exp:
            kwargs[key] = exp[key]
    if "band" in exp:
        kwargs["band"] = tuple(exp["band"])
    if seed is not None:
        kwargs["seed_base"] = int(seed)
    elif "seed_base" not in kwargs and "seed" in cfg:
        kwargs["seed_base"] = int(cfg["seed"])
    try:
        return Scenario(kernel=kernel_from(cfg), truth=truth_from(cfg),
                        design=design_from(cfg), sigma=float(cfg.get("sigma", 0.2)),
                        fit=fit_config_from(cfg), name=str(cfg.get("name", "scenario")),
                        **kwargs)
    except ContractError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
