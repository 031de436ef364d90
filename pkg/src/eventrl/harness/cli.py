"""Command line entry point.

    eventrl sweep --config grid.cfg --out results/
    eventrl check-bound --config grid.cfg --trials 2000

Exit codes: 0 success, 1 configuration error, 2 numerical failure
(divergence, violated assumptions), 3 failed check (check-* commands).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..analysis import check_key_inequality, theorem_bound_check
from ..learner import AssumptionViolation, DivergenceError
from . import csvio
from .config import ConfigError, Setup, load_config
from .experiments import run_agent_scaling, run_sweep, run_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

COMMANDS = ("sweep", "trajectory", "scaling", "check-assumptions", "check-bound", "check-inequality")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eventrl", description="Event-triggered distributed value-function learning experiments.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "sweep": "lambda sweep per trigger kind (tradeoff curves)",
        "trajectory": "one logged run per trajectory.lambdas entry",
        "scaling": "iterations-to-threshold and communication per agent count",
        "check-assumptions": "step size / decay rate admissibility",
        "check-bound": "Monte Carlo check of the performance bound",
        "check-inequality": "Monte Carlo check of the trigger/loss covariance inequality",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="run config (key = value text)")
        sp.add_argument("--out", help="output directory (overrides run.out)")
        sp.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
        sp.add_argument("--trials", type=int, help="trials per point (overrides run.trials)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


class Report:
    def __init__(self, out: Path, command: str, seed):
        self.out, self.command, self.seed = out, command, seed
        self.lines: list[str] = []

    def csv(self, name, columns, rows):
        path = csvio.write_rows(self.out / name, columns, rows, csvio.header_line(self.command, self.seed))
        self.lines.append(f"wrote {path}")
        return path

    def __call__(self, line=""):
        self.lines.append(line)

    def finish(self):
        text = "\n".join(self.lines) + "\n"
        sys.stdout.write(text)
        (self.out / f"{self.command.replace('-', '_')}_summary.txt").write_text(text, encoding="utf-8")


def _write_sweep(results, rep):
    for kind, res in results.items():
        rep.csv(f"sweep_{kind}.csv", csvio.SWEEP_COLUMNS, csvio.sweep_rows(res))
        rep(f"{kind}:")
        for r in res.rows:
            rep(f"  lambda={r.lam:<10.4g} comm={r.comm_rate_mean:.4f}±{r.comm_rate_se:.4f} "
                f"J(w_N)={r.final_loss_mean:.6g}±{r.final_loss_se:.2g}")


def _sweep(cfg, rep):
    try:
        results = run_sweep(cfg)
    except (AssumptionViolation, DivergenceError) as exc:
        partial = getattr(exc, "partial", {})
        if partial:
            _write_sweep(partial, rep)
            rep("sweep aborted; rows above are partial")
            rep.finish()
        raise
    _write_sweep(results, rep)
    return EXIT_OK


def _trajectory(cfg, rep):
    lams = cfg.get("trajectory.lambdas") or [cfg["trigger.lambda"]]
    for j, lam in enumerate(lams):
        res = run_trajectory(cfg, lam=lam)
        rec = res.record
        rep.csv(f"trajectory_{j}.csv", csvio.trajectory_columns(rec.weights.shape[1]), csvio.trajectory_rows(rec))
        rep(f"lambda={lam:g} trigger={cfg['trigger.kind']} comm_rate={rec.comm_rate:.4f} "
            f"transmissions first/second half={res.first_half}/{res.second_half} "
            f"|w_N - w*|={rec.dist[-1]:.6g} J(w_N)-J*={rec.final_loss - rec.j_star:.6g}")
    return EXIT_OK


def _scaling(cfg, rep):
    rows = run_agent_scaling(cfg)
    rep.csv("scaling.csv", csvio.SCALING_COLUMNS,
            [(r.m, r.trials, r.iterations_median, r.comm_rate_mean, r.comm_rate_se, r.final_loss_mean,
              r.final_loss_se) for r in rows])
    for r in rows:
        rep(f"m={r.m:<3d} median iterations to {cfg['scaling.tolerance']:g} threshold={r.iterations_median:g} "
            f"comm={r.comm_rate_mean:.4f}±{r.comm_rate_se:.4f}")
    return EXIT_OK


def _check_assumptions(cfg, rep):
    s = Setup(cfg)
    a = s.assumptions()
    rep.csv("assumptions.csv", csvio.ASSUMPTION_COLUMNS,
            [(i, float(e), float(mg)) for i, (e, mg) in enumerate(zip(s.moment_summary.eigenvalues, a.margins))])
    rep(f"min eigenvalue {a.phi_min_eig:.6g}  max eigenvalue {a.lambda_max:.6g}")
    rep(f"epsilon={a.epsilon:g} (bound step {a.theorem_epsilon:g})  max |1-2 eps lambda_i|={a.margins.max():.6g}  "
        f"ok={a.epsilon_ok}")
    rep(f"rho={a.rho:.9g}  minimum allowed={a.rho_min_allowed:.9g}  ok={a.rho_ok}")
    for f in a.failures():
        rep(f"FAIL: {f}")
    return EXIT_OK if a.ok else EXIT_CHECK


def _check_bound(cfg, rep):
    s = Setup(cfg)
    rows, ok = [], True
    for lam in cfg["bound.lambdas"]:
        b = theorem_bound_check(s.env, s.basis, s.v_current, s.hyper(lam=lam), cfg.trials, cfg.seed, w0=s.w0,
                                G_mode=cfg["bound.G_mode"], G_batches=cfg["bound.G_batches"],
                                waive=cfg["hyper.waive_assumptions"], objective=s.objective)
        rows.append((lam, b.trials, b.lhs_estimate, b.lhs_stderr, b.rhs_value, b.comm_rate, b.final_loss, b.passed))
        ok &= b.passed
        rep(f"lambda={lam:g}: LHS {b.lhs_estimate:.6g} ± {b.lhs_stderr:.2g}  RHS {b.rhs_value:.6g}  "
            f"{'pass' if b.passed else 'FAIL'}")
    rep.csv("bound.csv", csvio.BOUND_COLUMNS, rows)
    return EXIT_OK if ok else EXIT_CHECK


def _check_inequality(cfg, rep):
    s = Setup(cfg)
    r = check_key_inequality(s.env, s.basis, s.v_current, s.hyper(), cfg["inequality.points"],
                             cfg["inequality.draws"], cfg.seed, threshold=cfg.get("inequality.threshold"),
                             spread=cfg["inequality.spread"], objective=s.objective)
    rows = [(j, r.threshold, r.draws, float(p), float(a), float(b), float(e), bool(ok))
            for j, (p, a, b, e, ok) in enumerate(zip(r.transmit_prob, r.lhs, r.rhs, r.stderr, r.passed_each))]
    rep.csv("inequality.csv", csvio.INEQUALITY_COLUMNS, rows)
    rep(f"threshold {r.threshold:.6g}, {r.draws} draws at {len(r.lhs)} points; "
        f"transmit probability range [{r.transmit_prob.min():.3f}, {r.transmit_prob.max():.3f}]")
    rep(f"max (lhs - rhs)/se = {np.max((r.lhs - r.rhs) / np.where(r.stderr > 0, r.stderr, 1)):.3f}  "
        f"{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if r.passed else EXIT_CHECK


_HANDLERS = {
    "sweep": _sweep,
    "trajectory": _trajectory,
    "scaling": _scaling,
    "check-assumptions": _check_assumptions,
    "check-bound": _check_bound,
    "check-inequality": _check_inequality,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            over["run.seed"] = args.seed
        if args.trials is not None:
            over["run.trials"] = args.trials
        if args.out is not None:
            over["run.out"] = args.out
        if over:
            cfg = cfg.with_overrides(**over)
        out = Path(cfg["run.out"])
        out.mkdir(parents=True, exist_ok=True)
        rep = Report(out, args.command, cfg.seed)
        code = _HANDLERS[args.command](cfg, rep)
        rep.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssumptionViolation, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
