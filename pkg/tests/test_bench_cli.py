import math

import numpy as np
import pytest

from cfsbayes import bench, cli
from cfsbayes.bench import BENCH_COLUMNS, RmseTable, TrialOutcome, bench_tasks, rmse, run_bench, summarize_cell
from cfsbayes.config import RunConfig, dumps_config, loads_config
from cfsbayes.errors import ConfigError, DomainError, NumericalError
from cfsbayes.sensing import read_scenario

SMALL = """\
[scenario]
M = 20
L = 40
N = 80
support = 20, 50
snr_db = 20

[em]
L_MC = 10
R = 10
d_max = 3

[sampler]
burn_in = 10

[estimation]
burst_samples = 5
burst_burn = 5

[bench]
snr_grid = 10, 20
m_over_l = 0.5
matrix_kinds = gauss
strategies = s2
trials = 2
master_seed = 3
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


class TestRmse:
    def test_single_trial(self):
        assert rmse([3.0], 0.0) == 3.0

    def test_two_trials(self):
        assert rmse([3.0, 4.0], 0.0) == pytest.approx(math.sqrt(12.5))
        assert rmse([[3.0, 0.0], [0.0, 4.0]], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5))

    def test_exact_recovery_is_zero(self):
        assert rmse([[60, 64, 180]] * 3, [60, 64, 180]) == 0.0

    def test_errors(self):
        with pytest.raises(DomainError):
            rmse([], 0.0)
        with pytest.raises(DomainError):
            rmse([[1.0, 2.0]], [1.0])


class TestSummaries:
    def _ok(self, **kw):
        base = dict(ok=True, support=np.array([3, 9]), true_support=np.array([3, 9]), amplitudes=np.array([1.0, 1.0]),
                    theta_hat=1.0, true_theta=1.0, sigma_hat=0.1, sigma_true=0.1, crb_x=0.04, crb_theta=0.01)
        base.update(kw)
        return TrialOutcome(**base)

    def test_perfect_recovery(self):
        row = summarize_cell([self._ok(), self._ok()], 1.0)
        for c in ("rmse_s", "rmse_x_support", "rmse_theta", "rmse_sigma"):
            assert row[c] == 0.0
        assert row["rcrb_x"] == pytest.approx(0.2) and row["rcrb_theta"] == pytest.approx(0.1)
        assert not row["degraded"] and row["n_trials_ok"] == 2

    def test_support_offsets(self):
        row = summarize_cell([self._ok(support=np.array([4, 9])), self._ok(support=np.array([3, 7]))], 1.0)
        assert row["rmse_s"] == pytest.approx(math.sqrt((1 + 4) / 2))

    def test_degraded_threshold(self):
        bad = TrialOutcome(False, error="NumericalError")
        assert not summarize_cell([self._ok()] * 4 + [bad], 1.0)["degraded"]
        assert summarize_cell([self._ok()] * 3 + [bad] * 2, 1.0)["degraded"]
        row = summarize_cell([bad], 1.0)
        assert row["degraded"] and math.isnan(row["rmse_s"])


class TestConfig:
    def test_defaults(self):
        cfg = loads_config("")
        assert cfg.scenario.M == 67 and cfg.bench.trials == 20
        est = cfg.estimation_config()
        assert est.em.d_max == 35 and est.em.L_MC == 500 and len(est.grid) == 100
        assert est.nu == 1.0

    def test_unknown_key_cites_line(self):
        text = "[scenario]\nM = 10\n\n[em]\nL_MC = 5\nLMC = 7\n"
        with pytest.raises(ConfigError, match="line 6") as exc:
            loads_config(text)
        assert exc.value.line == 6

    def test_unknown_section_cites_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            loads_config("[scenario]\nM = 10\n[nope]\nx = 1\n")

    def test_bad_value_cites_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            loads_config("[bench]\ntrials = many\n")

    def test_syntax_error(self):
        with pytest.raises(ConfigError):
            loads_config("M = 10\n")

    def test_semantic_error(self):
        with pytest.raises(ConfigError):
            loads_config("[bench]\nstrategies = s3\n")
        with pytest.raises(ConfigError):
            loads_config("[em]\nd_max = 0\n")

    def test_comments(self):
        cfg = loads_config("[scenario]\n# note\nM = 12 ; twelve\nL = 24  # inline\n")
        assert (cfg.scenario.M, cfg.scenario.L) == (12, 24)

    def test_round_trip(self):
        cfg = loads_config(SMALL)
        again = loads_config(dumps_config(cfg))
        assert again == cfg

    def test_bundled_reference_configs(self):
        ref = loads_config(cli.bundled("reference.cfg"))
        assert ref.bench.strategies == ("s1", "s2")
        assert ref.bench.m_over_l == (0.3, 0.5)
        assert ref.bench.matrix_kinds == ("gauss", "df")
        assert ref.bench.trials == 100
        demo = loads_config(cli.bundled("demo.cfg"))
        assert demo.scenario.support == (60, 64, 180)
        off = loads_config(cli.bundled("offgrid_demo.cfg"))
        assert off.scenario.delays is not None


class TestBench:
    def test_tasks_share_seeds_across_cells(self):
        cfg = loads_config(SMALL)
        tasks = bench_tasks(cfg)
        assert len(tasks) == 4
        seeds = [t[1][3] for t in tasks]
        assert seeds == [3, 4, 3, 4]

    def test_reference_config_has_one_row_per_cell(self):
        cfg = loads_config(cli.bundled("reference.cfg"))
        keys = [k for k, _ in bench_tasks(cfg)]
        cells = list(dict.fromkeys(keys))
        assert len(cells) == 2 * 2 * 2 * 9
        assert all(keys.count(c) == 100 for c in cells[:3])

    def test_csv_schema_and_round_trip(self):
        table = run_bench(loads_config(SMALL))
        text = table.to_csv()
        lines = text.splitlines()
        assert tuple(lines[0].split(",")) == BENCH_COLUMNS
        assert len(lines) == 3
        back = RmseTable.from_csv(text)
        assert back.to_csv() == text
        assert [r["snr_db"] for r in back.rows] == [10.0, 20.0]
        assert all(r["trials"] == 2 for r in back.rows)

    def test_plot_data(self):
        table = RmseTable([{"strategy": "s2", "matrix_kind": "gauss", "m_over_l": 0.5, "snr_db": 10.0,
                            **{c: 0.5 for c in bench.VALUE_COLUMNS}, "n_trials_ok": 1, "trials": 1,
                            "degraded": False}])
        files = table.plot_data()
        assert list(files) == ["rmse_s2_gauss_ml50.csv"]
        assert files["rmse_s2_gauss_ml50.csv"].splitlines()[1].startswith("10.0,")

    def test_bad_header(self):
        with pytest.raises(DomainError):
            RmseTable.from_csv("a,b\n1,2\n")

    def test_failed_trials_are_captured(self, monkeypatch):
        def boom(*a, **k):
            raise NumericalError("diverged")

        monkeypatch.setitem(bench.ESTIMATORS, "s2", boom)
        table = run_bench(loads_config(SMALL))
        assert table.degraded
        assert all(r["n_trials_ok"] == 0 for r in table.rows)


class TestCli:
    def test_estimate_demo(self, capsys):
        assert cli.main(["--seed", "7", "estimate", "--strategy", "s2", "--demo"]) == 0
        out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
        assert out["strategy"] == "s2"
        assert len(out["support"].split(",")) == 3
        assert float(out["theta_hat"]) > 0
        assert out["em_iters"] == "1"

    def test_simulate_and_estimate_file(self, tmp_path, small_cfg, capsys):
        args = ["--config", str(small_cfg), "--seed", "2", "--out", str(tmp_path)]
        assert cli.main(args + ["simulate", "--name", "s.txt"]) == 0
        sc = read_scenario(tmp_path / "s.txt")
        assert sc.M == 20 and sc.support.tolist() == [20, 50]
        capsys.readouterr()
        assert cli.main(args + ["estimate", "--strategy", "s1", "--scenario", str(tmp_path / "s.txt"),
                                "--dump-trace"]) == 0
        assert (tmp_path / "report.txt").read_text().startswith("strategy=s1")
        assert (tmp_path / "x_map.csv").read_text().splitlines()[0] == "index,x_map"
        head = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
        assert head[:6] == ["iteration", "log_post", "k_w", "lambda_w", "lambda_delta", "sigma_n2"]

    def test_trace_command_has_theta_column(self, tmp_path, small_cfg):
        args = ["--config", str(small_cfg), "--out", str(tmp_path), "trace", "--strategy", "s2"]
        assert cli.main(args) == 0
        assert "theta" in (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")

    def test_crb_sigma_scale_doubles(self, tmp_path, small_cfg, capsys):
        base = ["--config", str(small_cfg), "crb", "--draws", "2"]
        assert cli.main(base) == 0
        a = capsys.readouterr().out.splitlines()
        assert cli.main(base + ["--sigma-scale", "2"]) == 0
        b = capsys.readouterr().out.splitlines()
        assert a[0] == b[0] == "snr_db,m_over_l,matrix_kind,rcrb_x,rcrb_theta"
        for ra, rb in zip(a[1:], b[1:]):
            xa, ta = map(float, ra.split(",")[3:])
            xb, tb = map(float, rb.split(",")[3:])
            assert xb == 2 * xa and tb == 2 * ta

    def test_bench_writes_files(self, tmp_path, small_cfg):
        rc = cli.main(["--config", str(small_cfg), "--out", str(tmp_path), "bench", "--emit-plot-data"])
        assert rc == 0
        assert (tmp_path / "bench.csv").read_text().splitlines()[0] == ",".join(BENCH_COLUMNS)
        assert (tmp_path / "rmse_s2_gauss_ml50.csv").exists()

    def test_exit_code_config_error(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("[scenario]\nMM = 3\n")
        assert cli.main(["--config", str(p), "crb"]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_exit_code_missing_file(self):
        assert cli.main(["--config", "/nonexistent/x.cfg", "crb"]) == 2
        assert cli.main(["estimate", "--scenario", "/nonexistent/s.txt"]) == 2

    def test_exit_code_bad_threads(self):
        assert cli.main(["--threads", "0", "crb"]) == 2

    def test_exit_code_numerical(self, monkeypatch):
        from cfsbayes import dict_learning

        def boom(*a, **k):
            raise NumericalError("sampler failed")

        monkeypatch.setattr(dict_learning, "s2_estimate", boom)
        assert cli.main(["estimate", "--demo"]) == 3

    def test_exit_code_degraded(self, tmp_path, small_cfg, monkeypatch):
        def boom(*a, **k):
            raise NumericalError("diverged")

        monkeypatch.setitem(bench.ESTIMATORS, "s2", boom)
        assert cli.main(["--config", str(small_cfg), "--out", str(tmp_path), "bench"]) == 4

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2


def test_run_config_default_is_reference_point():
    cfg = RunConfig()
    assert (cfg.scenario.M, cfg.scenario.L, cfg.scenario.N) == (67, 134, 268)
    assert cfg.scenario.snr_db == 20.0
