"""Run configuration: flat ``key = value`` text with dotted sections.

Example::

    # grid reference setup
    environment.kind = gridworld
    hyper.T = 10
    trigger.kind = oracle
    trigger.lambda = 0.1
    sweep.lambdas.oracle = 1e-6, 1e-5, 1e-4

Lists are comma separated. ``#`` starts a comment. Unknown keys are errors.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..analysis import check_assumptions, min_rho
from ..features import indicator_basis, polynomial_basis_deg2, second_moment
from ..learner import HyperParams, QuadraticObjective, random_value_function
from ..mdp import make_gridworld, make_linear_gaussian, make_rng
from ..trigger import KINDS, TriggerPolicy

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "Setup"]

RHO_MARGIN = 1e-6
DEFAULT_LAMBDA_COUNT = 12


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        if key in out:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        out[key] = value
    return out


# key -> (parser, default); None default means "required or derived"
def _bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _words(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _opt_float(s):
    return None if s.lower() in ("none", "off", "") else float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


_SCHEMA = {
    "environment.kind": (str, "gridworld"),
    "environment.rows": (_int, 3),
    "environment.cols": (_int, 3),
    "environment.goal": (_int, None),
    "environment.slip_prob": (float, 0.5),
    "environment.A": (_floats, [0.8, -0.2, 0.1, 1.0]),
    "environment.noise_cov": (_floats, [0.1]),
    "environment.gamma": (float, 0.9),
    "basis.kind": (str, "auto"),
    "basis.quad_res": (_int, 512),
    "hyper.epsilon": (float, 1.0),
    "hyper.T": (_int, 10),
    "hyper.N": (_int, None),
    "hyper.total_tuples": (float, None),
    "hyper.m": (_int, 2),
    "hyper.rho": (str, "auto"),
    "hyper.projection_bound": (_opt_float, None),
    "hyper.w0": (_floats, None),
    "hyper.waive_assumptions": (_bool, False),
    "trigger.kind": (str, "oracle"),
    "trigger.lambda": (float, 0.0),
    "trigger.divide_by_N": (_bool, True),
    "trigger.p": (float, 0.5),
    "run.trials": (_int, 100),
    "run.seed": (_int, 0),
    "run.out": (str, "results"),
    "sweep.triggers": (_words, ["oracle", "eq17", "random"]),
    "sweep.lambdas": (_floats, None),
    "sweep.lambdas.oracle": (_floats, None),
    "sweep.lambdas.eq17": (_floats, None),
    "sweep.lambdas.exact_quadratic": (_floats, None),
    "sweep.lambda_min": (float, 1e-4),
    "sweep.lambda_max": (float, 1.0),
    "sweep.lambda_count": (_int, DEFAULT_LAMBDA_COUNT),
    "sweep.random_p": (_floats, [i / 10 for i in range(11)]),
    "trajectory.lambdas": (_floats, None),
    "scaling.agent_counts": (_ints, [2, 10]),
    "scaling.tolerance": (float, 0.05),
    "scaling.lambda": (float, None),
    "bound.lambdas": (_floats, [0.01, 0.1, 1.0]),
    "bound.G_mode": (str, "w_star"),
    "bound.G_batches": (_int, 20_000),
    "inequality.points": (_int, 20),
    "inequality.draws": (_int, 100_000),
    "inequality.spread": (float, 0.1),
    "inequality.threshold": (float, None),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @classmethod
    def from_mapping(cls, raw: dict[str, str], source=None) -> "RunConfig":
        vals = {}
        for key in raw:
            if key not in _SCHEMA:
                raise ConfigError(key, "unknown key")
        for key, (conv, default) in _SCHEMA.items():
            if key in raw:
                try:
                    vals[key] = conv(raw[key])
                except ValueError as exc:
                    raise ConfigError(key, str(exc)) from None
            else:
                vals[key] = default
        cfg = cls(vals, source)
        cfg.validate()
        return cfg

    def with_overrides(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        for key, value in kv.items():
            key = key.replace("__", ".")
            if key not in _SCHEMA:
                raise ConfigError(key, "unknown key")
            vals[key] = value
        cfg = replace(self, values=vals)
        cfg.validate()
        return cfg

    def validate(self):
        v = self.values
        kind = v["environment.kind"]
        if kind not in ("gridworld", "linear_gaussian"):
            raise ConfigError("environment.kind", f"expected gridworld or linear_gaussian, got {kind!r}")
        if v["basis.kind"] not in ("auto", "indicator", "poly2"):
            raise ConfigError("basis.kind", f"expected auto, indicator or poly2, got {v['basis.kind']!r}")
        if kind == "gridworld":
            if v["environment.rows"] < 1 or v["environment.cols"] < 1:
                raise ConfigError("environment.rows", "grid dimensions must be positive")
            if not 0 <= v["environment.slip_prob"] <= 1:
                raise ConfigError("environment.slip_prob", "must lie in [0, 1]")
            goal = v["environment.goal"]
            if goal is not None and not 0 <= goal < v["environment.rows"] * v["environment.cols"]:
                raise ConfigError("environment.goal", f"cell {goal} outside the grid")
            if v["basis.kind"] == "poly2":
                raise ConfigError("basis.kind", "poly2 needs a continuous environment")
        else:
            if len(v["environment.A"]) != 4:
                raise ConfigError("environment.A", "expected 4 entries (row-major 2x2)")
            if len(v["environment.noise_cov"]) not in (1, 4):
                raise ConfigError("environment.noise_cov", "expected a scalar or 4 entries")
            if not 0 < v["environment.gamma"] < 1:
                raise ConfigError("environment.gamma", "must lie in (0, 1)")
            if v["basis.kind"] == "indicator":
                raise ConfigError("basis.kind", "indicator needs a finite environment")
        if v["basis.quad_res"] < 1:
            raise ConfigError("basis.quad_res", "must be >= 1")
        for key in ("hyper.T", "hyper.m", "run.trials"):
            if v[key] < 1:
                raise ConfigError(key, "must be >= 1")
        if not v["hyper.epsilon"] > 0:
            raise ConfigError("hyper.epsilon", "must be > 0")
        if v["hyper.N"] is None and v["hyper.total_tuples"] is None:
            raise ConfigError("hyper.N", "set hyper.N or hyper.total_tuples")
        if v["hyper.N"] is not None and v["hyper.N"] < 1:
            raise ConfigError("hyper.N", "must be >= 1")
        if v["hyper.rho"] != "auto":
            try:
                rho = float(v["hyper.rho"])
            except ValueError:
                raise ConfigError("hyper.rho", f"expected 'auto' or a number, got {v['hyper.rho']!r}") from None
            if not 0 < rho <= 1:
                raise ConfigError("hyper.rho", "must lie in (0, 1]")
        pb = v["hyper.projection_bound"]
        if pb is not None and not pb > 0:
            raise ConfigError("hyper.projection_bound", "must be positive or none")
        if v["trigger.kind"] not in KINDS:
            raise ConfigError("trigger.kind", f"expected one of {', '.join(KINDS)}")
        if v["trigger.lambda"] < 0:
            raise ConfigError("trigger.lambda", "must be >= 0")
        if not 0 <= v["trigger.p"] <= 1:
            raise ConfigError("trigger.p", "must lie in [0, 1]")
        for kind in v["sweep.triggers"]:
            if kind not in KINDS:
                raise ConfigError("sweep.triggers", f"unknown trigger {kind!r}")
        for key in ("sweep.lambdas", "sweep.lambdas.oracle", "sweep.lambdas.eq17",
                    "sweep.lambdas.exact_quadratic", "trajectory.lambdas", "bound.lambdas"):
            if v[key] is not None and any(x < 0 for x in v[key]):
                raise ConfigError(key, "lambda values must be >= 0")
        if not 0 < v["sweep.lambda_min"] <= v["sweep.lambda_max"]:
            raise ConfigError("sweep.lambda_min", "need 0 < lambda_min <= lambda_max")
        if v["sweep.lambda_count"] < 1:
            raise ConfigError("sweep.lambda_count", "must be >= 1")
        if any(not 0 <= p <= 1 for p in v["sweep.random_p"]):
            raise ConfigError("sweep.random_p", "probabilities must lie in [0, 1]")
        if not v["scaling.agent_counts"] or min(v["scaling.agent_counts"]) < 1:
            raise ConfigError("scaling.agent_counts", "need at least one count >= 1")
        if not 0 < v["scaling.tolerance"] < 1:
            raise ConfigError("scaling.tolerance", "must lie in (0, 1)")
        if v["bound.G_mode"] not in ("w_star", "path_max"):
            raise ConfigError("bound.G_mode", "expected w_star or path_max")
        if v["bound.G_batches"] < 2:
            raise ConfigError("bound.G_batches", "must be >= 2")
        if v["inequality.points"] < 1 or v["inequality.draws"] < 2:
            raise ConfigError("inequality.points", "need points >= 1 and draws >= 2")

    # -- derived objects -------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    @property
    def trials(self) -> int:
        return self.values["run.trials"]

    @property
    def N(self) -> int:
        v = self.values
        if v["hyper.N"] is not None:
            return v["hyper.N"]
        return max(1, int(round(v["hyper.total_tuples"] / (v["hyper.m"] * v["hyper.T"]))))

    def lambdas_for(self, kind: str) -> list[float]:
        v = self.values
        own = v.get(f"sweep.lambdas.{kind}")
        if own is not None:
            return sorted(own)
        if v["sweep.lambdas"] is not None:
            return sorted(v["sweep.lambdas"])
        return list(np.geomspace(v["sweep.lambda_min"], v["sweep.lambda_max"], v["sweep.lambda_count"]))


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return RunConfig.from_mapping(parse_config(text), source=path)


class Setup:
    """Environment, basis, initial value function and exact objective built
    from a config. The initial value function is drawn once from the run
    seed and shared by every trial."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        v = cfg.values
        if v["environment.kind"] == "gridworld":
            self.env = make_gridworld(v["environment.rows"], v["environment.cols"], v["environment.goal"],
                                      v["environment.slip_prob"])
            self.basis = indicator_basis(self.env.n_states)
        else:
            nc = v["environment.noise_cov"]
            cov = nc[0] * np.eye(2) if len(nc) == 1 else np.reshape(nc, (2, 2))
            try:
                self.env = make_linear_gaussian(np.reshape(v["environment.A"], (2, 2)), cov, v["environment.gamma"])
            except ValueError as exc:
                raise ConfigError("environment.noise_cov", str(exc)) from None
            self.basis = polynomial_basis_deg2()
        self.v_current = random_value_function(self.env, self.basis, make_rng(cfg.seed, 99))
        w0 = v["hyper.w0"]
        n = self.basis.n_features
        if w0 is not None and len(w0) != n:
            raise ConfigError("hyper.w0", f"expected {n} entries, got {len(w0)}")
        self.w0 = np.zeros(n) if w0 is None else np.asarray(w0, dtype=float)

    @cached_property
    def objective(self) -> QuadraticObjective:
        return QuadraticObjective.build(self.env, self.basis, self.v_current, self.cfg["basis.quad_res"])

    @cached_property
    def moment_summary(self):
        return second_moment(self.basis, self.env, "exact")

    @property
    def rho(self) -> float:
        r = self.cfg["hyper.rho"]
        if r == "auto":
            return min(1.0, min_rho(self.moment_summary, self.cfg["hyper.epsilon"], "eq5") + RHO_MARGIN)
        return float(r)

    def assumptions(self):
        return check_assumptions(self.moment_summary, self.cfg["hyper.epsilon"], self.rho, gradient="eq5")

    def hyper(self, *, lam=None, m=None) -> HyperParams:
        v = self.cfg.values
        return HyperParams(
            epsilon=v["hyper.epsilon"],
            T=v["hyper.T"],
            N=self.cfg.N,
            m=v["hyper.m"] if m is None else m,
            lam=v["trigger.lambda"] if lam is None else lam,
            rho=self.rho,
            projection_bound=v["hyper.projection_bound"],
        )

    def trigger(self, kind=None, *, lam=None, p=None) -> TriggerPolicy:
        v = self.cfg.values
        return TriggerPolicy(
            kind=v["trigger.kind"] if kind is None else kind,
            lam=v["trigger.lambda"] if lam is None else lam,
            rho=self.rho,
            N=self.cfg.N,
            divide_by_N=v["trigger.divide_by_N"],
            p=v["trigger.p"] if p is None else p,
        )
