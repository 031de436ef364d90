"""Experiment drivers: lambda sweeps, single trajectories, agent scaling.

Trial ``t`` of a config with root seed ``s`` always uses seed ``(s, 0, t)``,
and agent ``i`` of that trial draws its data from ``(s, 0, t, 0, i)``. Data
are therefore shared across lambda values, trigger kinds and agent counts
(common random numbers), which is what makes pathwise comparisons such as
"smaller lambda communicates more" meaningful.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..learner import AgentData, AssumptionViolation, RunRecord, agent_data, make_rng_seed, run_inner_loop
from ..mdp import make_rng
from .config import RunConfig, Setup

__all__ = [
    "SweepRow",
    "SweepResult",
    "TrajectoryResult",
    "ScalingRow",
    "TrialRunner",
    "run_sweep",
    "run_trajectory",
    "run_agent_scaling",
    "loss_at_comm",
    "iterations_to_threshold",
    "worker_count",
]

log = logging.getLogger(__name__)

WORKERS_ENV = "EVENTRL_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def trial_seed(root, t):
    return make_rng_seed(root, 0, t)


class TrialRunner:
    """Runs seeded trials for one setup, caching agent data per trial."""

    def __init__(self, setup: Setup, trials: int | None = None, seed: int | None = None):
        self.setup = setup
        self.trials = setup.cfg.trials if trials is None else trials
        self.seed = setup.cfg.seed if seed is None else seed
        self._data: dict[int, list[AgentData]] = {}

    def check_assumptions(self):
        rep = self.setup.assumptions()
        if not rep.ok and not self.setup.cfg["hyper.waive_assumptions"]:
            raise AssumptionViolation("; ".join(rep.failures()))
        return rep

    def data(self, t: int, m: int) -> list[AgentData]:
        have = self._data.get(t, [])
        if len(have) < m:
            s = trial_seed(self.seed, t)
            T, N = self.setup.cfg["hyper.T"], self.setup.cfg.N
            have = have + [
                agent_data(self.setup.env, self.setup.basis, self.setup.v_current, T, N, make_rng(s, 0, i))
                for i in range(len(have), m)
            ]
            self._data[t] = have
        return have[:m]

    def run(self, kind, *, lam=None, p=None, m=None) -> list[RunRecord]:
        s = self.setup
        hyper = s.hyper(lam=lam, m=m)
        policy = s.trigger(kind, lam=hyper.lam, p=p)
        workers = worker_count()
        if workers > 1 and self.trials > 1:
            args = [(s.cfg, hyper, policy, self.seed, t) for t in range(self.trials)]
            with ProcessPoolExecutor(workers) as ex:
                return list(ex.map(_remote_trial, args, chunksize=max(1, self.trials // (4 * workers))))
        return [
            run_inner_loop(s.env, s.basis, s.v_current, hyper, policy, trial_seed(self.seed, t),
                           w0=s.w0, objective=s.objective, data=self.data(t, hyper.m))
            for t in range(self.trials)
        ]


def _remote_trial(args):
    cfg, hyper, policy, seed, t = args
    s = _setup_cache(cfg)
    ts = trial_seed(seed, t)
    return run_inner_loop(s.env, s.basis, s.v_current, hyper, policy, ts, w0=s.w0, objective=s.objective)


_SETUPS: dict[str, Setup] = {}


def _setup_cache(cfg):
    key = repr(sorted(cfg.values.items()))
    if key not in _SETUPS:
        _SETUPS.clear()
        _SETUPS[key] = Setup(cfg)
    return _SETUPS[key]


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


@dataclass(frozen=True)
class SweepRow:
    trigger: str
    lam: float  # transmit probability p for the random baseline
    trials: int
    comm_rate_mean: float
    comm_rate_se: float
    final_loss_mean: float
    final_loss_se: float


@dataclass
class SweepResult:
    trigger: str
    rows: list[SweepRow]

    def comm(self):
        return np.array([r.comm_rate_mean for r in self.rows])

    def loss(self):
        return np.array([r.final_loss_mean for r in self.rows])

    def loss_se(self):
        return np.array([r.final_loss_se for r in self.rows])


def summarize_records(kind, lam, records) -> SweepRow:
    c, cse = _mean_se([r.comm_rate for r in records])
    f, fse = _mean_se([r.final_loss for r in records])
    return SweepRow(kind, float(lam), len(records), c, cse, f, fse)


def run_sweep(cfg: RunConfig, lambda_values=None, kinds=None, runner: TrialRunner | None = None) -> dict[str, SweepResult]:
    """Tradeoff curves: for every trigger kind and lambda, mean communication
    rate and mean final loss over the configured trials.

    The random baseline is swept over ``sweep.random_p`` instead of lambda.
    If a run fails, the exception carries the finished rows as ``exc.partial``.
    """
    runner = runner or TrialRunner(Setup(cfg))
    runner.check_assumptions()
    kinds = kinds or cfg["sweep.triggers"]
    out = {}
    for kind in kinds:
        if kind == "random":
            grid = sorted(cfg["sweep.random_p"])
        elif kind in ("always", "never"):
            grid = [0.0]
        else:
            grid = sorted(lambda_values) if lambda_values is not None else cfg.lambdas_for(kind)
        rows = []
        out[kind] = SweepResult(kind, rows)
        for val in grid:
            try:
                recs = runner.run(kind, p=val) if kind == "random" else runner.run(kind, lam=val)
            except Exception as exc:
                # completed rows travel with the error so callers can flush them
                exc.partial = {k: r for k, r in out.items() if r.rows}
                raise
            rows.append(summarize_records(kind, val, recs))
            log.info("sweep %s %g: comm %.4f loss %.5g", kind, val, rows[-1].comm_rate_mean, rows[-1].final_loss_mean)
    return out


def loss_at_comm(result: SweepResult, rates, extend: bool = False):
    """Linear interpolation of the loss-vs-communication frontier.

    Returns (loss, stderr) at each rate; NaN outside the observed range.
    Points are ordered by communication rate; ties keep the lower loss.
    With ``extend`` the curve is held flat above its largest observed rate
    at the loss of that point: a rule that reaches loss f using a fraction c
    of the slots also achieves f when a larger budget is allowed.
    """
    c, f, se = result.comm(), result.loss(), result.loss_se()
    order = np.lexsort((f, c))
    c, f, se = c[order], f[order], se[order]
    keep = np.concatenate([[True], np.diff(c) > 0])
    c, f, se = c[keep], f[keep], se[keep]
    rates = np.asarray(rates, dtype=float)
    hi = np.inf if extend else c[-1]
    inside = (rates >= c[0]) & (rates <= hi)
    fl = np.where(inside, np.interp(rates, c, f), np.nan)
    sl = np.where(inside, np.interp(rates, c, se), np.nan)
    return fl, sl


@dataclass
class TrajectoryResult:
    record: RunRecord
    lam: float
    first_half: int
    second_half: int


def run_trajectory(cfg: RunConfig, lam=None, kind=None, trial: int = 0) -> TrajectoryResult:
    """One logged trial (weights, decisions, gains per iteration)."""
    setup = Setup(cfg)
    runner = TrialRunner(setup, trials=1)
    runner.check_assumptions()
    lam = cfg["trigger.lambda"] if lam is None else lam
    kind = kind or cfg["trigger.kind"]
    hyper = setup.hyper(lam=lam)
    policy = setup.trigger(kind, lam=lam)
    rec = run_inner_loop(setup.env, setup.basis, setup.v_current, hyper, policy, trial_seed(cfg.seed, trial),
                         w0=setup.w0, objective=setup.objective)
    per_k = rec.alpha.sum(axis=1)
    half = rec.N // 2
    return TrajectoryResult(rec, lam, int(per_k[:half].sum()), int(per_k[half:].sum()))


def iterations_to_threshold(record: RunRecord, tolerance: float = 0.05) -> float:
    """First k with J(w_k) - J* <= tolerance (J(w_0) - J*); inf if never."""
    excess = record.loss - record.j_star
    hit = np.nonzero(excess <= tolerance * excess[0])[0]
    return float(hit[0]) if len(hit) else float("inf")


@dataclass(frozen=True)
class ScalingRow:
    m: int
    trials: int
    iterations_median: float
    comm_rate_mean: float
    comm_rate_se: float
    final_loss_mean: float
    final_loss_se: float


def run_agent_scaling(cfg: RunConfig, agent_counts=None, lam=None, kind=None,
                      runner: TrialRunner | None = None) -> list[ScalingRow]:
    """Iterations to reach the loss tolerance and communication rate per agent count."""
    runner = runner or TrialRunner(Setup(cfg))
    runner.check_assumptions()
    counts = agent_counts or cfg["scaling.agent_counts"]
    if not counts:
        raise ValueError("agent_counts must be non-empty")
    lam = lam if lam is not None else cfg.get("scaling.lambda", cfg["trigger.lambda"])
    kind = kind or cfg["trigger.kind"]
    tol = cfg["scaling.tolerance"]
    rows = []
    for m in counts:
        recs = runner.run(kind, lam=lam, m=m)
        its = [iterations_to_threshold(r, tol) for r in recs]
        c, cse = _mean_se([r.comm_rate for r in recs])
        f, fse = _mean_se([r.final_loss for r in recs])
        rows.append(ScalingRow(int(m), len(recs), float(np.median(its)), c, cse, f, fse))
    return rows
