import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventrl.harness import csvio
from eventrl.harness.cli import main
from eventrl.harness.config import ConfigError, RunConfig, Setup, load_config, parse_config
from eventrl.harness.experiments import (
    SweepResult,
    SweepRow,
    TrialRunner,
    iterations_to_threshold,
    loss_at_comm,
    run_agent_scaling,
    run_sweep,
    run_trajectory,
)
from eventrl.learner import AssumptionViolation, RunRecord

SMALL_GRID = """
environment.kind = gridworld
hyper.N = 20
hyper.rho = 0.9
run.trials = 6
sweep.lambdas = 0.001, 0.1, 1000
sweep.random_p = 0, 0.5, 1
bound.lambdas = 0.1
bound.G_batches = 500
inequality.points = 3
inequality.draws = 2000
"""

SMALL_LQ = """
environment.kind = linear_gaussian
hyper.T = 50
hyper.N = 60
hyper.rho = 0.999
trigger.kind = eq17
trigger.lambda = 1
run.trials = 3
trajectory.lambdas = 1, 0.1
scaling.agent_counts = 1, 2
basis.quad_res = 64
"""


def cfg_of(text, **over):
    cfg = RunConfig.from_mapping(parse_config(text))
    return cfg.with_overrides(**over) if over else cfg


@pytest.fixture
def grid_cfg_file(tmp_path):
    p = tmp_path / "grid.cfg"
    p.write_text(SMALL_GRID)
    return p


# ---- config ------------------------------------------------------------------------------

def test_parse_config_format():
    d = parse_config("# c\n a = 1 \nb.c = x, y  # trailing\n\n")
    assert d == {"a": "1", "b.c": "x, y"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("a = 1\na = 2")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("novalue")


@pytest.mark.parametrize("text,key", [
    ("hyper.N = 10\nbogus.key = 1", "bogus.key"),
    ("hyper.N = 10\nhyper.epsilon = -1", "hyper.epsilon"),
    ("hyper.N = 10\nhyper.T = 2.5", "hyper.T"),
    ("hyper.N = 10\ntrigger.kind = sometimes", "trigger.kind"),
    ("hyper.N = 10\nhyper.rho = 1.5", "hyper.rho"),
    ("hyper.N = 10\nenvironment.goal = 12", "environment.goal"),
    ("hyper.N = 10\nenvironment.kind = torus", "environment.kind"),
    ("hyper.N = 10\nsweep.random_p = 0.5, 2", "sweep.random_p"),
    ("hyper.N = 10\nhyper.waive_assumptions = maybe", "hyper.waive_assumptions"),
    ("trigger.kind = oracle", "hyper.N"),
    ("hyper.N = 10\nbasis.kind = poly2", "basis.kind"),
])
def test_config_field_errors(text, key):
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_mapping(parse_config(text))
    assert exc.value.key == key and str(exc.value).startswith(key)


def test_config_defaults_and_derived():
    cfg = cfg_of("hyper.total_tuples = 1e8\nhyper.T = 1000\nhyper.m = 2")
    assert cfg.N == 50_000 and cfg.seed == 0 and cfg.trials == 100
    lams = cfg.lambdas_for("oracle")
    assert len(lams) == 12 and lams[0] == pytest.approx(1e-4) and lams[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(np.log(lams)), np.log(1e4) / 11)
    cfg2 = cfg_of("hyper.N = 5\nsweep.lambdas = 3, 1\nsweep.lambdas.eq17 = 2")
    assert cfg2.lambdas_for("oracle") == [1, 3] and cfg2.lambdas_for("eq17") == [2]


def test_config_overrides_validated():
    cfg = cfg_of("hyper.N = 5")
    assert cfg.with_overrides(run__seed=4).seed == 4
    with pytest.raises(ConfigError):
        cfg.with_overrides(run__nothing=1)
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"hyper.epsilon": 0.0})


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_setup_builds_objects():
    s = Setup(cfg_of(SMALL_GRID))
    assert s.basis.n_features == 9 and s.rho == 0.9
    auto = Setup(cfg_of("hyper.N = 5"))
    assert auto.rho == pytest.approx(64 / 81 + 1e-6)
    assert auto.assumptions().ok
    lq = Setup(cfg_of(SMALL_LQ))
    assert lq.basis.n_features == 6 and lq.objective.Phi.shape == (6, 6)
    with pytest.raises(ConfigError):
        Setup(cfg_of("hyper.N = 5\nhyper.w0 = 1, 2"))


def test_shipped_configs_load():
    for name in ("grid", "grid_sweep", "continuous"):
        cfg = load_config(f"configs/{name}.cfg")
        assert Setup(cfg).assumptions().ok


# ---- csv ---------------------------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(finite, st.integers(1, 10**6), finite, finite, finite, finite), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_sweep_csv_roundtrip(tmp_path_factory, rows):
    res = SweepResult("eq17", [SweepRow("eq17", *r) for r in rows])
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    csvio.write_sweep(path, res, csvio.header_line("sweep", 0))
    assert csvio.read_sweep(path) == res


def test_fmt_values():
    assert csvio.fmt(True) == "1" and csvio.fmt(3) == "3" and csvio.fmt(None) == ""
    assert csvio.fmt(float("nan")) == "nan" and csvio.fmt(-math.inf) == "-inf"
    assert float(csvio.fmt(0.1)) == 0.1


def test_sweep_schema(tmp_path):
    path = csvio.write_sweep(tmp_path / "a.csv", SweepResult("x", []))
    assert path.read_text().splitlines()[0] == "trigger,lambda,trials,comm_rate_mean,comm_rate_se,final_loss_mean,final_loss_se"


def test_trajectory_rows():
    rec = RunRecord(alpha=np.array([[1, 0], [0, 0]], dtype=np.int8), gains=np.array([[-1.0, 0.5], [0.1, 0.2]]),
                    loss=np.array([3.0, 2.0, 2.0]), dist=np.zeros(3), weights=np.arange(6.0).reshape(3, 2),
                    w_star=np.zeros(2), j_star=0.0)
    rows = list(csvio.trajectory_rows(rec))
    assert csvio.trajectory_columns(2) == ["k", "agent_id", "alpha", "gain", "loss", "weight_0", "weight_1"]
    assert rows[0] == [0, 0, 1, -1.0, 3.0, 0.0, 1.0]
    assert rows[3] == [1, 1, 0, 0.2, 2.0, 2.0, 3.0]
    assert rows[-1] == [2, -1, None, None, 2.0, 4.0, 5.0]


# ---- experiments -------------------------------------------------------------------------

def test_sweep_rows_valid():
    cfg = cfg_of(SMALL_GRID)
    out = run_sweep(cfg)
    assert set(out) == {"oracle", "eq17", "random"}
    for res in out.values():
        lams = [r.lam for r in res.rows]
        assert lams == sorted(lams)
        for r in res.rows:
            assert 0 <= r.comm_rate_mean <= 1 and r.comm_rate_se >= 0 and r.final_loss_se >= 0
            assert np.isfinite(r.final_loss_mean) and r.trials == 6
    rnd = out["random"].rows
    assert rnd[0].comm_rate_mean == 0 and rnd[-1].comm_rate_mean == 1
    # very large lambda freezes the oracle
    s = Setup(cfg)
    assert out["oracle"].rows[-1].comm_rate_mean == 0
    assert out["oracle"].rows[-1].final_loss_mean == pytest.approx(s.objective(s.w0))


def test_sweep_common_random_numbers():
    cfg = cfg_of(SMALL_GRID)
    runner = TrialRunner(Setup(cfg))
    a = run_sweep(cfg, kinds=["random"], runner=runner)["random"]
    b = run_sweep(cfg, kinds=["random"])["random"]
    assert a == b


def test_sweep_assumption_violation_carries_partial():
    cfg = cfg_of(SMALL_GRID, **{"hyper.rho": "0.5"})
    with pytest.raises(AssumptionViolation):
        run_sweep(cfg)


def test_loss_at_comm_interpolation():
    rows = [SweepRow("x", 0, 1, c, 0, f, s) for c, f, s in [(0.0, 4.0, 0.4), (0.5, 2.0, 0.2), (0.5, 3.0, 0.1),
                                                           (0.8, 1.0, 0.1)]]
    f, s = loss_at_comm(SweepResult("x", rows), [0.0, 0.25, 0.5, 0.9])
    np.testing.assert_allclose(f[:3], [4.0, 3.0, 2.0])
    assert np.isnan(f[3]) and np.isnan(s[3])
    f, _ = loss_at_comm(SweepResult("x", rows), [0.9, 1.0], extend=True)
    np.testing.assert_allclose(f, [1.0, 1.0])


def test_iterations_to_threshold():
    rec = RunRecord(np.zeros((3, 1)), np.zeros((3, 1)), np.array([11.0, 5.0, 1.4, 1.2]), np.zeros(4),
                    np.zeros((4, 1)), np.zeros(1), 1.0)
    assert iterations_to_threshold(rec, 0.05) == 2
    assert iterations_to_threshold(rec, 0.5) == 1
    assert iterations_to_threshold(rec, 0.01) == math.inf


def test_trajectory_never_is_flat():
    res = run_trajectory(cfg_of(SMALL_LQ), kind="never")
    assert np.all(res.record.weights == res.record.weights[0])
    assert res.first_half == res.second_half == 0


def test_trajectory_halves_count_transmissions():
    res = run_trajectory(cfg_of(SMALL_LQ), lam=0.1)
    per_k = res.record.alpha.sum(axis=1)
    assert res.first_half == per_k[:30].sum() and res.second_half == per_k[30:].sum()


def test_scaling_single_agent_always():
    cfg = cfg_of(SMALL_LQ)
    rows = run_agent_scaling(cfg, agent_counts=[1], kind="always")
    assert rows[0].m == 1 and rows[0].comm_rate_mean == 1.0


def test_averaging_halves_update_variance():
    """Always-transmit: the server step is the mean of m gradients, so its
    variance at fixed w shrinks like 1/m."""
    from eventrl.learner import agent_data
    from eventrl.mdp import make_rng
    s = Setup(cfg_of(SMALL_GRID))
    w = s.objective.w_star
    d = [agent_data(s.env, s.basis, s.v_current, 10, 20_000, make_rng(1, i)) for i in range(4)]
    g = [di.moment @ w - di.target for di in d]
    v2 = np.var((g[0] + g[1]) / 2, axis=0, ddof=1).sum()
    v4 = np.var((g[0] + g[1] + g[2] + g[3]) / 4, axis=0, ddof=1).sum()
    assert v2 / v4 == pytest.approx(2.0, rel=0.05)


# ---- cli ---------------------------------------------------------------------------------

def test_cli_sweep_writes_csvs(grid_cfg_file, tmp_path, capsys):
    out = tmp_path / "results"
    assert main(["sweep", "--config", str(grid_cfg_file), "--out", str(out), "--trials", "3"]) == 0
    for k in ("oracle", "eq17", "random"):
        res = csvio.read_sweep(out / f"sweep_{k}.csv")
        assert res.rows and res.rows[0].trials == 3
    assert (out / "sweep_summary.txt").read_text() == capsys.readouterr().out


def test_cli_check_commands(grid_cfg_file, tmp_path):
    out = str(tmp_path)
    assert main(["check-assumptions", "--config", str(grid_cfg_file), "--out", out]) == 0
    assert main(["check-bound", "--config", str(grid_cfg_file), "--out", out, "--trials", "20"]) == 0
    assert main(["check-inequality", "--config", str(grid_cfg_file), "--out", out]) == 0
    _, rows = csvio.read_rows(tmp_path / "bound.csv")
    assert len(rows) == 1 and rows[0][-1] == "1"


def test_cli_exit_codes(tmp_path, capsys):
    missing = tmp_path / "missing.cfg"
    assert main(["sweep", "--config", str(missing)]) == 1
    assert "cannot read" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["launch", "--config", "x"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text("hyper.N = 5\nhyper.epsilon = zero\n")
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "hyper.epsilon" in capsys.readouterr().err
    strict = tmp_path / "strict.cfg"
    strict.write_text(SMALL_GRID.replace("hyper.rho = 0.9", "hyper.rho = 0.5"))
    assert main(["sweep", "--config", str(strict), "--out", str(tmp_path)]) == 2
    assert main(["check-assumptions", "--config", str(strict), "--out", str(tmp_path)]) == 3
    assert main(["check-bound", "--config", str(strict), "--out", str(tmp_path)]) == 2
    waived = tmp_path / "waived.cfg"
    waived.write_text(SMALL_GRID.replace("hyper.rho = 0.9", "hyper.rho = 0.5") + "hyper.waive_assumptions = true\n")
    assert main(["sweep", "--config", str(waived), "--out", str(tmp_path), "--trials", "2"]) == 0


def test_cli_divergence_exit(tmp_path):
    p = tmp_path / "div.cfg"
    p.write_text(SMALL_LQ.replace("trigger.kind = eq17", "trigger.kind = always")
                 + "hyper.epsilon = 50\nhyper.waive_assumptions = true\n")
    assert main(["trajectory", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_cli_bound_failure_exit(tmp_path):
    """A bound that cannot hold (rho far below the contraction, waived) is reported as a failed check."""
    p = tmp_path / "loose.cfg"
    p.write_text(SMALL_GRID.replace("hyper.rho = 0.9", "hyper.rho = 0.05").replace("hyper.N = 20", "hyper.N = 3")
                 + "hyper.waive_assumptions = true\n")
    assert main(["check-bound", "--config", str(p), "--out", str(tmp_path), "--trials", "50"]) == 3


def test_cli_trajectory_and_scaling(tmp_path):
    p = tmp_path / "lq.cfg"
    p.write_text(SMALL_LQ)
    assert main(["trajectory", "--config", str(p), "--out", str(tmp_path)]) == 0
    cols, rows = csvio.read_rows(tmp_path / "trajectory_1.csv")
    assert cols == csvio.trajectory_columns(6) and len(rows) == 60 * 2 + 1
    assert main(["scaling", "--config", str(p), "--out", str(tmp_path)]) == 0
    cols, rows = csvio.read_rows(tmp_path / "scaling.csv")
    assert [r[0] for r in rows] == ["1", "2"]


@pytest.mark.parametrize("cmd", ["sweep", "check-bound", "check-inequality", "check-assumptions"])
def test_cli_deterministic_bodies(grid_cfg_file, tmp_path, cmd):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main([cmd, "--config", str(grid_cfg_file), "--out", str(d), "--trials", "3", "--seed", "5"]) == 0
    files = sorted(p.name for p in a.glob("*.csv"))
    assert files and files == sorted(p.name for p in b.glob("*.csv"))
    for name in files:
        assert csvio.body(a / name) == csvio.body(b / name)
        assert (a / name).read_text().startswith("# eventrl")


def test_worker_pool_matches_serial(monkeypatch):
    cfg = cfg_of(SMALL_GRID)
    serial = run_sweep(cfg, kinds=["oracle"])
    monkeypatch.setenv("EVENTRL_WORKERS", "2")
    assert run_sweep(cfg, kinds=["oracle"]) == serial
