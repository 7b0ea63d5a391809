import csv
import io
import json
import math
import subprocess
import sys

import pytest

from gammaforge import cli

OU_JOB = {
    "operator": {"dim": 2, "a": [["1", "0"], ["0", "1"]], "b": ["-x1", "-x2"]},
    "params": {"K": 1, "N": "inf"},
    "grid": {"axes": [[-1, 1, 3], [-1, 1, 3]]},
}


def write_job(tmp_path, job, name="job.json"):
    p = tmp_path / name
    p.write_text(json.dumps(job))
    return p


def run_main(tmp_path, command, job, *extra):
    jp = write_job(tmp_path, job)
    out = tmp_path / "out" / "report.json"
    code = cli.main([command, "--job", str(jp), "--out", str(out), *extra])
    return code, out


class TestGrid:
    def test_single_axis(self):
        assert cli.grid_expand({"axes": [[0, 1, 3]]}) == [(0.0,), (0.5,), (1.0,)]

    def test_lexicographic(self):
        assert cli.grid_expand({"axes": [[0, 1, 2], [0, 1, 2]]}) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_explicit_points_pass_through(self):
        pts = [[0.1, 0.2], [-3, 4]]
        assert cli.grid_expand({"points": pts}) == [(0.1, 0.2), (-3.0, 4.0)]

    def test_count_one(self):
        assert cli.grid_expand({"axes": [[2, 2, 1]]}) == [(2.0,)]

    @pytest.mark.parametrize("spec", [
        {"axes": [[0, 1, 0]]},
        {"axes": [[0, 1, 2.5]]},
        {"axes": [[1, 0, 3]]},
        {"axes": []},
        {"points": []},
        {"points": [[0.0], [0.0, 1.0]]},
        None,
    ])
    def test_errors(self, spec):
        with pytest.raises(cli.UsageError):
            cli.grid_expand(spec)


class TestHelpers:
    def test_ext_real(self):
        assert cli.ext_real("inf") == math.inf and cli.ext_real("-inf") == -math.inf
        assert cli.ext_real(2) == 2.0

    def test_jsonable(self):
        assert cli.jsonable({"a": [math.inf, -math.inf, 1.5]}) == {"a": ["inf", "-inf", 1.5]}

    def test_csv_format(self):
        text = cli.render_csv(["x1", "note"], [[0.1, "a,b"], [1.0, 'say "hi"']])
        assert text.split("\r\n")[0] == "x1,note"
        assert text.endswith("\r\n") and "\n" not in text.replace("\r\n", "")
        rows = list(csv.reader(io.StringIO(text, newline="")))
        assert rows[1] == ["0.1", "a,b"] and rows[2] == ["1.0", 'say "hi"']


class TestExitCodes:
    def test_check_be_passes(self, tmp_path):
        code, out = run_main(tmp_path, "check-be", OU_JOB)
        body = json.loads(out.read_text())["body"]
        assert code == 0 and body["passed"] and body["violating_points"] == []

    def test_check_be_fails_and_still_reports(self, tmp_path, capsys):
        job = {**OU_JOB, "params": {"K": 1.01, "N": "inf"}}
        code, out = run_main(tmp_path, "check-be", job)
        body = json.loads(out.read_text())["body"]
        assert code == 1 and not body["passed"] and body["exit_code"] == 1
        assert len(body["violating_points"]) == 9
        assert out.with_suffix(".csv").exists()
        assert "FAILED" in capsys.readouterr().err

    def test_parse_error_position(self, tmp_path, capsys):
        job = {**OU_JOB, "operator": {"dim": 2, "a": [["1", "0"], ["0", "1"]], "b": ["x1 +", "0"]}}
        code, out = run_main(tmp_path, "check-be", job)
        assert code == 2 and not out.exists()
        assert "4" in capsys.readouterr().err

    def test_schema_error_names_field(self, tmp_path, capsys):
        job = {**OU_JOB, "params": {"K": 1, "N": "inf", "bogus": 3}}
        assert run_main(tmp_path, "check-be", job)[0] == 2
        assert "params" in capsys.readouterr().err

    def test_unreadable_job(self, tmp_path):
        assert cli.main(["check-be", "--job", str(tmp_path / "missing.json")]) == 2

    def test_bad_seed(self, tmp_path):
        assert run_main(tmp_path, "check-be", OU_JOB, "--seed", "-1")[0] == 2

    def test_command_mismatch(self, tmp_path):
        assert run_main(tmp_path, "check-be", {**OU_JOB, "command": "gamma"})[0] == 2


class TestReports:
    def test_csv_matches_records(self, tmp_path):
        _, out = run_main(tmp_path, "check-be", OU_JOB)
        body = json.loads(out.read_text())["body"]
        raw = out.with_suffix(".csv").read_bytes()
        rows = list(csv.DictReader(io.StringIO(raw.decode(), newline="")))
        assert list(rows[0]) == ["x1", "x2", "mu", "K", "residual", "rank", "minus_infinity"]
        assert len(rows) == len(body["records"]) == 9
        assert b"\r\n" in raw
        for row, rec in zip(rows, body["records"]):
            assert [float(row["x1"]), float(row["x2"])] == rec["point"]
            assert float(row["residual"]) == rec["residual"]

    def test_aggregates_recomputable(self, tmp_path):
        job = {**OU_JOB, "params": {"K": 0.5, "N": "inf"}}
        _, out = run_main(tmp_path, "check-be", job)
        body = json.loads(out.read_text())["body"]
        recs = body["records"]
        assert body["aggregates"]["best_k"] == pytest.approx(min(r["mu"] for r in recs))
        assert body["aggregates"]["min_residual"] == pytest.approx(min(r["residual"] for r in recs))
        assert body["aggregates"]["violations"] == sum(r["residual"] < -body["tolerance"] for r in recs)

    def test_overrides_recorded(self, tmp_path):
        _, out = run_main(tmp_path, "check-be", OU_JOB, "--seed", "99", "--tol", "1e-3")
        body = json.loads(out.read_text())["body"]
        assert body["provenance"]["seed"] == 99 and body["tolerance"] == 1e-3
        assert body["provenance"]["tool"] == "gammaforge"

    def test_default_seed_recorded(self, tmp_path):
        _, out = run_main(tmp_path, "check-be", OU_JOB)
        assert json.loads(out.read_text())["body"]["provenance"]["seed"] == cli.DEFAULT_SEED

    def test_deterministic_body(self):
        a = cli.render_body(cli.run(OU_JOB, "check-be").body)
        b = cli.render_body(cli.run(OU_JOB, "check-be").body)
        assert a == b

    def test_report_path_from_job(self, tmp_path):
        target = tmp_path / "nested" / "r.json"
        job = {**OU_JOB, "output": {"report": str(target), "table": str(tmp_path / "t.csv")}}
        jp = write_job(tmp_path, job)
        assert cli.main(["check-be", "--job", str(jp)]) == 0
        assert target.exists() and (tmp_path / "t.csv").exists()


class TestCommands:
    @pytest.mark.parametrize("command,job", [
        ("gamma", {"operator": {"dim": 1, "preset": "ornstein-uhlenbeck"}, "params": {"u": "x1^2", "v": "x1"},
                   "grid": {"points": [[0.5]]}}),
        ("ricci", {"operator": {"dim": 2, "preset": "euclidean"}, "params": {"f": "x1^2 + x2", "N": 3},
                   "grid": {"points": [[0.1, 0.2]]}}),
        ("spectral-gap", {"operator": {"dim": 1, "preset": "ornstein-uhlenbeck"}, "domain": {"lo": -8, "hi": 8},
                          "m": 256}),
    ])
    def test_runs(self, command, job):
        res = cli.run(job, command)
        assert res.exit_code == 0 and res.rows

    def test_gamma_value(self):
        job = {"operator": {"dim": 1, "preset": "euclidean"}, "params": {"u": "x1^2", "v": "x1^3"},
               "grid": {"points": [[2.0]]}}
        res = cli.run(job, "gamma")
        assert res.rows[0][-1] == pytest.approx(2 * 2.0 * 3 * 4.0)


def test_console_script(tmp_path):
    jp = write_job(tmp_path, OU_JOB)
    proc = subprocess.run([sys.executable, "-m", "gammaforge.cli", "check-be", "--job", str(jp)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["body"]["passed"] is True
