"""CSV emission. Floats are written with 17 significant digits so that rows
read back reproduce the in-memory values exactly. An optional first line
starting with ``#`` carries run metadata and is ignored by the readers."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import math
from pathlib import Path

from .experiments import ScalingRow, SweepResult, SweepRow

SWEEP_COLUMNS = ["trigger", "lambda", "trials", "comm_rate_mean", "comm_rate_se", "final_loss_mean", "final_loss_se"]
SCALING_COLUMNS = ["m", "trials", "iterations_to_threshold_median", "comm_rate_mean", "comm_rate_se",
                   "final_loss_mean", "final_loss_se"]
BOUND_COLUMNS = ["lambda", "trials", "lhs_mean", "lhs_se", "rhs", "comm_rate_mean", "final_loss_mean", "passed"]
INEQUALITY_COLUMNS = ["point", "threshold", "draws", "transmit_prob", "lhs", "rhs", "diff_se", "passed"]
ASSUMPTION_COLUMNS = ["index", "eigenvalue", "margin"]


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if x is None:
        return ""
    return str(x)


def header_line(command: str, seed) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"# eventrl {command} seed={seed} generated={stamp}\n"


def write_rows(path, columns, rows, header: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(header)
        fh.write(buf.getvalue())
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def body(path) -> str:
    """File contents without metadata lines (what determinism is judged on)."""
    with open(path, encoding="utf-8") as fh:
        return "".join(ln for ln in fh if not ln.startswith("#"))


def sweep_rows(result: SweepResult):
    for r in result.rows:
        yield (r.trigger, r.lam, r.trials, r.comm_rate_mean, r.comm_rate_se, r.final_loss_mean, r.final_loss_se)


def write_sweep(path, result: SweepResult, header=None) -> Path:
    return write_rows(path, SWEEP_COLUMNS, sweep_rows(result), header)


def read_sweep(path) -> SweepResult:
    cols, rows = read_rows(path)
    if cols != SWEEP_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {cols}")
    out = [SweepRow(r[0], float(r[1]), int(r[2]), *map(float, r[3:])) for r in rows]
    return SweepResult(out[0].trigger if out else "", out)


def write_scaling(path, rows: list[ScalingRow], header=None) -> Path:
    data = [(r.m, r.trials, r.iterations_median, r.comm_rate_mean, r.comm_rate_se, r.final_loss_mean,
             r.final_loss_se) for r in rows]
    return write_rows(path, SCALING_COLUMNS, data, header)


def trajectory_columns(n):
    return ["k", "agent_id", "alpha", "gain", "loss"] + [f"weight_{j}" for j in range(n)]


def trajectory_rows(record):
    """One row per (k, agent) with J(w_k) and w_k; a closing row k=N,
    agent_id=-1 carries J(w_N) and w_N with empty alpha/gain."""
    for k in range(record.N):
        w = [float(x) for x in record.weights[k]]
        for i in range(record.m):
            yield [k, i, int(record.alpha[k, i]), float(record.gains[k, i]), float(record.loss[k])] + w
    yield [record.N, -1, None, None, float(record.loss[-1])] + [float(x) for x in record.weights[-1]]


def write_trajectory(path, record, header=None) -> Path:
    return write_rows(path, trajectory_columns(record.weights.shape[1]), trajectory_rows(record), header)
