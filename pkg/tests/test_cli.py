"""Command-line interface: config grammar, subcommands, exit codes, outputs."""
import csv
import json

import numpy as np
import pytest

from gmblasso.cli import ConfigError, build_run_config, main, parse_config_text

SEPARATED = """\
# separated two-component scenario
kernel.d = 1
kernel.tau = 1.0
scenario.weights = 0.5, 0.5
scenario.t = -13, 13
scenario.u = 1, 1
scenario.box.t_lo = -20
scenario.box.t_hi = 20
scenario.box.u_min = 1.0
scenario.box.u_max = 1.0
seed.master = 0
"""

SINGLE_COMPONENT = """\
kernel.d = 1
kernel.tau = 0.5
scenario.weights = 1.0
scenario.t = 0
scenario.u = 1
scenario.box.t_lo = -8
scenario.box.t_hi = 8
scenario.box.u_min = 0.5
scenario.box.u_max = 2.0
"""

SOLVE_TUNING = """\
solver.iterations = 400
solver.step_w = 4.0
solver.step_x = 8.0
solver.merge_radius = 0.605
solver.merge_period = 10
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def read_meta(path):
    return json.loads(path.read_text())


class TestConfigParsing:
    def test_values_comments_positions(self):
        entries = parse_config_text(
            "# leading comment\n"
            "kernel.d = 1\n"
            "\n"
            "scenario.t = -1, 2  # trailing comment\n")
        assert entries["kernel.d"][0] == "1"
        assert entries["kernel.d"][1] == 2            # line numbers are 1-based
        assert entries["scenario.t"][0] == "-1, 2"

    def test_missing_equals(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("kernel.d 1\n")
        assert err.value.line == 1
        assert "=" in str(err.value)

    def test_duplicate_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("kernel.d = 1\nkernel.d = 2\n")
        assert err.value.line == 2
        assert "duplicate" in str(err.value)

    def test_empty_value(self):
        with pytest.raises(ConfigError):
            parse_config_text("kernel.d =\n")

    def test_malformed_key(self):
        with pytest.raises(ConfigError):
            parse_config_text("justakey = 1\n")

    def test_render_includes_position(self):
        err = ConfigError("boom", line=3, col=7)
        assert err.render() == "config:3:7: boom"
        assert ConfigError("boom").render() == "config error: boom"


class TestBuildRunConfig:
    def test_full_scenario(self):
        run = build_run_config(parse_config_text(SEPARATED))
        assert run.d == 1 and run.tau == 1.0
        assert run.mixture.s == 2
        assert run.box.t_lo == (-20.0,)
        assert run.seed == 0

    def test_unknown_key_reports_line(self):
        text = SEPARATED + "solver.bogus = 1\n"
        with pytest.raises(ConfigError) as err:
            build_run_config(parse_config_text(text))
        assert "solver.bogus" in str(err.value)
        assert err.value.line == len(SEPARATED.splitlines()) + 1

    def test_bad_matrix_shape(self):
        text = SEPARATED.replace("scenario.u = 1, 1", "scenario.u = 1, 1, 1")
        with pytest.raises(ConfigError):
            build_run_config(parse_config_text(text))

    def test_domain_error_becomes_config_error(self):
        text = SEPARATED.replace("scenario.weights = 0.5, 0.5",
                                 "scenario.weights = 0.7, 0.5")
        with pytest.raises(ConfigError):
            build_run_config(parse_config_text(text))

    def test_bad_value_type_reports_position(self):
        text = SEPARATED.replace("kernel.d = 1", "kernel.d = one")
        with pytest.raises(ConfigError) as err:
            build_run_config(parse_config_text(text))
        assert err.value.line == 2


class TestCertify:
    def test_separated_scenario_passes(self, tmp_path):
        cfg = write_cfg(tmp_path, SEPARATED + f"output.dir = {tmp_path}/out\n")
        assert main(["certify", "--config", cfg]) == 0
        clauses = read_rows(tmp_path / "out" / "certify_clauses.csv")
        assert clauses[0] == ["clause", "points", "worst_margin", "worst_point",
                              "violations", "passed"]
        assert clauses[1][0] == "separation"
        assert all(row[5] == "true" for row in clauses[1:])
        sols = read_rows(tmp_path / "out" / "certify_solutions.csv")
        kinds = [row[0] for row in sols[1:]]
        assert kinds == ["global", "local", "local"]
        assert all(row[5] == "true" for row in sols[1:])
        # global certificate p-norm^2 <= 2s, locals <= 2
        assert float(sols[1][2]) ** 2 <= 2 * 2 + 1e-9
        assert float(sols[2][2]) ** 2 <= 2 + 1e-9
        assert all(float(row[3]) < 1e-9 for row in sols[1:])
        meta = read_meta(tmp_path / "out" / "certify_clauses.csv.meta.json")
        assert meta["all_clauses_pass"] is True
        assert meta["separation_satisfied"] is True
        assert meta["config"]["kernel.tau"] == 1.0
        assert meta["config"]["scenario.weights"] == [0.5, 0.5]

    def test_unseparated_scenario_fails(self, tmp_path):
        text = SEPARATED.replace("scenario.t = -13, 13", "scenario.t = -1, 1")
        cfg = write_cfg(tmp_path, text + f"output.dir = {tmp_path}/out\n")
        assert main(["certify", "--config", cfg]) == 1
        clauses = read_rows(tmp_path / "out" / "certify_clauses.csv")
        sep_row = clauses[1]
        assert sep_row[0] == "separation" and sep_row[5] == "false"

    def test_malformed_config_exit_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "kernel.d 1\n")
        assert main(["certify", "--config", cfg]) == 2
        assert "config:1:" in capsys.readouterr().err

    def test_unreadable_config_exit_2(self, tmp_path, capsys):
        assert main(["certify", "--config", str(tmp_path / "nope.cfg")]) == 2
        assert "cannot read config" in capsys.readouterr().err


class TestSolve:
    def _config(self, tmp_path, *, extra="", drop="", name="run.cfg"):
        text = (SINGLE_COMPONENT + SOLVE_TUNING
                + "experiment.n = 3000\n"
                + f"output.dir = {tmp_path}/out\n"
                + "seed.master = 42\n"
                + extra)
        if drop:
            text = "\n".join(ln for ln in text.splitlines()
                             if not ln.startswith(drop)) + "\n"
        return write_cfg(tmp_path, text, name=name)

    def test_single_component_accepted(self, tmp_path):
        assert main(["solve", "--config", self._config(tmp_path)]) == 0
        rows = read_rows(tmp_path / "out" / "solve_measure.csv")
        assert rows[0] == ["atom", "weight", "t_0", "u_0"]
        assert len(rows) >= 2
        # the dominant atom sits near the true component (0, 1)
        best = max(rows[1:], key=lambda r: float(r[1]))
        assert abs(float(best[2])) < 0.2
        assert abs(float(best[3]) - 1.0) < 0.2
        meta = read_meta(tmp_path / "out" / "solve_measure.csv.meta.json")
        assert meta["acceptance"] is True and meta["aborted"] is False
        assert meta["n"] == 3000 and meta["kappa"] > 0
        trace = read_rows(tmp_path / "out" / "solve_trace.csv")
        assert trace[0][:3] == ["iteration", "objective", "fidelity"]
        vals = [float(r[1]) for r in trace[1:]]
        assert len(vals) >= 2
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self._config(tmp_path)
        main(["solve", "--config", cfg])
        first = (tmp_path / "out" / "solve_measure.csv").read_bytes()
        main(["solve", "--config", cfg])
        assert (tmp_path / "out" / "solve_measure.csv").read_bytes() == first

    def test_seed_override_changes_output(self, tmp_path):
        cfg = self._config(tmp_path)
        main(["solve", "--config", cfg])
        first = (tmp_path / "out" / "solve_measure.csv").read_bytes()
        main(["solve", "--config", cfg, "--seed", "43"])
        assert (tmp_path / "out" / "solve_measure.csv").read_bytes() != first

    def test_data_file_input(self, tmp_path):
        rng = np.random.default_rng(0)
        data = tmp_path / "obs.txt"
        np.savetxt(data, rng.normal(0.0, 1.0, size=2000))
        cfg = self._config(tmp_path, extra=f"data.file = {data}\n",
                           drop="experiment.n")
        assert main(["solve", "--config", cfg]) == 0
        meta = read_meta(tmp_path / "out" / "solve_measure.csv.meta.json")
        assert meta["n"] == 2000

    def test_missing_data_file_exit_2(self, tmp_path, capsys):
        cfg = self._config(tmp_path, extra="data.file = /nonexistent/data.txt\n",
                           drop="experiment.n")
        assert main(["solve", "--config", cfg]) == 2
        assert "not found" in capsys.readouterr().err

    def test_both_n_and_data_file_exit_2(self, tmp_path, capsys):
        data = tmp_path / "obs.txt"
        np.savetxt(data, np.zeros(10))
        cfg = self._config(tmp_path, extra=f"data.file = {data}\n")
        assert main(["solve", "--config", cfg]) == 2
        assert "not both" in capsys.readouterr().err

    def test_missing_n_exit_2(self, tmp_path, capsys):
        cfg = self._config(tmp_path, drop="experiment.n")
        assert main(["solve", "--config", cfg]) == 2
        assert "experiment.n" in capsys.readouterr().err


class TestRates:
    def _config(self, tmp_path):
        text = (SEPARATED.replace("seed.master = 0", "seed.master = 9")
                + SOLVE_TUNING
                + "experiment.n_grid = 300, 900\n"
                + "experiment.replications = 2\n"
                + "experiment.kappa_rule = agnostic\n"
                + f"output.dir = {tmp_path}/out\n")
        return write_cfg(tmp_path, text, name="rates.cfg")

    def test_outputs_and_headers(self, tmp_path):
        assert main(["rates", "--config", self._config(tmp_path)]) == 0
        rep = read_rows(tmp_path / "out" / "rates_replications.csv")
        assert rep[0] == ["n", "replication", "kappa", "tau", "ok", "error",
                          "mass_error", "far_mass", "tv_error",
                          "prediction_error", "atoms", "exactly_one_each",
                          "converged"]
        assert len(rep) == 5                    # 2 sizes x 2 replications
        assert all(row[4] == "true" for row in rep[1:])
        agg = read_rows(tmp_path / "out" / "rates_aggregates.csv")
        assert agg[0][-2:] == ["slope_mass_error", "slope_prediction_error"]
        assert len(agg) == 3
        meta = read_meta(tmp_path / "out" / "rates_aggregates.csv.meta.json")
        assert set(meta["slopes"]) >= {"mass_error", "prediction_error"}

    def test_byte_identical_across_runs_and_threads(self, tmp_path):
        cfg = self._config(tmp_path)
        # --out and --threads are not part of the resolved configuration, so
        # the data files and meta sidecars must match byte for byte
        assert main(["rates", "--config", cfg, "--threads", "1",
                     "--out", str(tmp_path / "a")]) == 0
        assert main(["rates", "--config", cfg, "--threads", "4",
                     "--out", str(tmp_path / "b")]) == 0
        for name in ("rates_replications.csv", "rates_aggregates.csv",
                     "rates_replications.csv.meta.json",
                     "rates_aggregates.csv.meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), name

    def test_effective_radii_extra_columns(self, tmp_path):
        text = (SEPARATED + SOLVE_TUNING
                + "experiment.n_grid = 300\n"
                + "experiment.replications = 1\n"
                + "experiment.r_e = 0.3025, 0.15\n"
                + f"output.dir = {tmp_path}/out\n")
        assert main(["rates", "--config", write_cfg(tmp_path, text)]) == 0
        rep = read_rows(tmp_path / "out" / "rates_replications.csv")
        assert "mass_error_r1" in rep[0]

    def test_empty_grid_exit_2(self, tmp_path, capsys):
        text = SEPARATED + f"output.dir = {tmp_path}/out\n"
        assert main(["rates", "--config", write_cfg(tmp_path, text)]) == 2
        assert "n_grid" in capsys.readouterr().err


class TestKernelCheck:
    def test_passes(self, capsys):
        assert main(["kernel-check", "--samples", "400", "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out
        assert "FAIL" not in out

    def test_rejects_nonpositive_samples(self, capsys):
        assert main(["kernel-check", "--samples", "0"]) == 2
        assert "positive" in capsys.readouterr().err

    def test_detects_seeded_defect(self, capsys, monkeypatch):
        # flip the sign of one Christoffel family; the metric-consistency
        # check must flag the mutation
        from gmblasso.kernel import _christoffel_coeffs as real

        def mutated(y, tau):
            gt, gu_tt, gu_uu = real(y, tau)
            return -gt, gu_tt, gu_uu

        monkeypatch.setattr("gmblasso.cli._christoffel_coeffs", mutated)
        assert main(["kernel-check", "--samples", "200"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out
        assert "check(s) failed" in out


class TestUsage:
    def test_no_arguments_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_config_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["solve"])
        assert exc.value.code == 2
