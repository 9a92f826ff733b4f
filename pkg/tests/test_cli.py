import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from offloadq.cli import (
    POINT_COLUMNS,
    ConfigError,
    execute,
    load_config,
    main,
    parse_config,
    render,
    sweep_values,
)
from offloadq.model import LinkLoad
from offloadq.simulator import LinkModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REFERENCE = yaml.safe_load((CONFIGS / "reference.yaml").read_text())


def params_only(**extra):
    raw = {k: v for k, v in REFERENCE.items() if k not in ("command", "p_ue", "p_ec")}
    raw.update(extra)
    return raw


def write(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


class TestConfig:
    def test_reference_file(self):
        spec = load_config(CONFIGS / "reference.yaml")
        p = spec.params
        assert (p.lambda_ext, p.mu_c, p.mu_e, p.mu_u) == (2, 25, 8, 1.5)
        assert (p.mu_ue, p.mu_ec, p.mu_ce, p.mu_eu) == (12, 22, 21, 11)
        assert (p.m, p.n, p.theta) == (5, 5, 1.2)
        assert spec.command == "evaluate"
        assert (spec.policy.p_ue, spec.policy.p_ec) == (0.675, 0.37)

    def test_json_accepted(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(REFERENCE))
        assert load_config(path).params == load_config(CONFIGS / "reference.yaml").params

    def test_zero_rate_names_field(self):
        with pytest.raises(ConfigError, match="mu_u"):
            parse_config({**REFERENCE, "mu_u": 0})

    def test_missing_field_named(self):
        raw = dict(REFERENCE)
        del raw["mu_ec"]
        with pytest.raises(ConfigError, match="mu_ec"):
            parse_config(raw)

    def test_malformed_number_named(self):
        with pytest.raises(ConfigError, match="theta"):
            parse_config({**REFERENCE, "theta": "1.2s"})

    def test_numeric_string_accepted(self):
        assert parse_config({**REFERENCE, "theta": "1.2"}).params.theta == 1.2

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="mu_x"):
            parse_config({**REFERENCE, "mu_x": 3})

    def test_fractional_fanout(self):
        with pytest.raises(ConfigError, match="m"):
            parse_config({**REFERENCE, "m": 2.5})

    def test_optimize_without_policy(self):
        spec = parse_config(params_only(command="optimize"))
        assert spec.policy is None and spec.command == "optimize"

    @pytest.mark.parametrize("command", ["evaluate", "simulate"])
    def test_point_commands_need_policy(self, command):
        with pytest.raises(ConfigError, match="p_ue"):
            parse_config(params_only(command=command))

    def test_sweep_needs_axis(self):
        with pytest.raises(ConfigError, match="sweep_axis"):
            parse_config(params_only(command="sweep", range=[1, 2, 0.5]))

    def test_sweep_other_coordinate_only(self):
        spec = parse_config(params_only(command="sweep", sweep_axis="p_ue", p_ec=0.4, range=[0.1, 0.9, 0.1]))
        assert spec.policy.p_ec == 0.4

    def test_command_and_seed_override(self):
        spec = parse_config({**REFERENCE, "seed": 3}, command="simulate", seed=9)
        assert spec.command == "simulate" and spec.sim.seed == 9

    def test_enum_keys(self):
        spec = parse_config({**REFERENCE, "link_load": "edge-only", "link_model": "physical-sharing"})
        assert spec.params.link_load is LinkLoad.EDGE_ONLY
        assert spec.sim.link_model is LinkModel.PHYSICAL_SHARING
        with pytest.raises(ConfigError, match="link_model"):
            parse_config({**REFERENCE, "link_model": "wifi"})


class TestOutput:
    def test_evaluate_row(self):
        table = execute(load_config(CONFIGS / "reference.yaml"))
        assert table.columns == POINT_COLUMNS
        row = table.rows[0]
        assert row["p_overall"] == pytest.approx(0.188, abs=0.002)
        assert (row["case_u"], row["case_e"], row["case_c"]) == ("(1)", "(1,1,1)", "(1,1,1,1,1)")

    def test_evaluate_and_simulate_headers_match(self):
        spec = load_config(CONFIGS / "reference.yaml")
        ev = render(execute(spec), "csv").splitlines()[0]
        sim = render(execute(parse_config({**REFERENCE, "replications": 2, "horizon": 200}, command="simulate")), "csv")
        assert sim.splitlines()[0] == ev

    def test_csv_round_trip_twelve_digits(self):
        table = execute(load_config(CONFIGS / "reference.yaml"))
        parsed = next(csv.DictReader(io.StringIO(render(table, "csv"))))
        for key in ("p_u", "p_e", "p_c", "p_overall", "delay_u"):
            assert float(parsed[key]) == pytest.approx(table.rows[0][key], rel=1e-11)

    def test_json(self):
        rows = json.loads(render(execute(load_config(CONFIGS / "reference.yaml")), "json"))
        assert rows[0]["half_width"] is None
        assert rows[0]["p_overall"] == pytest.approx(0.188477424502, abs=1e-12)

    def test_grid_dump(self):
        table = execute(parse_config(params_only(command="grid", resolution=0.1, grid_bounds=[0.1, 0.9])))
        assert len(table.rows) == 81
        best = min(table.rows, key=lambda r: r["p_overall"])
        assert (best["p_ue"], best["p_ec"]) == pytest.approx((0.7, 0.4))

    def test_optimize_rows(self):
        rows = execute(parse_config(params_only(command="optimize"))).rows
        assert [r["method"] for r in rows] == ["sgs", "grid-0.01"]
        assert rows[0]["p_overall"] <= rows[1]["p_overall"] + 1e-3

    def test_sweep_values_include_stop(self):
        assert sweep_values(1.0, 3.0, 0.25).tolist()[-1] == 3.0
        assert sweep_values(0.1, 0.9, 0.1).tolist() == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

    def test_p_ue_sweep_with_simulation(self):
        spec = parse_config(
            params_only(command="sweep", sweep_axis="p_ue", p_ec=0.4, range=[0.1, 0.3, 0.1], simulate=True, replications=2, horizon=300)
        )
        table = execute(spec)
        assert [r["axis_value"] for r in table.rows] == [0.1, 0.2, 0.3]
        assert "sim_mean" in table.columns
        assert table.rows[0]["flag"].startswith("unstable:u")
        assert "saturated" in table.rows[0]["flag"] and table.flagged


class TestMain:
    @pytest.mark.property
    def test_stdout_byte_stable(self, tmp_path, capsys):
        path = write(tmp_path, {**REFERENCE, "replications": 3, "horizon": 2000})
        outs = []
        for _ in range(2):
            assert main(["--config", str(path), "--command", "simulate", "--quiet"]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1] and outs[0].count("\n") == 2

    def test_file_output(self, tmp_path):
        out = tmp_path / "res.json"
        assert main(["--config", str(CONFIGS / "reference.yaml"), "--out", str(out), "--format", "json", "--quiet"]) == 0
        assert json.loads(out.read_text())[0]["p_ue"] == 0.675

    def test_config_error_exit(self, tmp_path):
        assert main(["--config", str(write(tmp_path, {**REFERENCE, "mu_u": 0})), "--quiet"]) == 1

    def test_missing_config_exit(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.yaml"), "--quiet"]) == 2

    def test_unwritable_output_exit(self, tmp_path):
        bad = tmp_path / "missing-dir" / "out.csv"
        assert main(["--config", str(CONFIGS / "reference.yaml"), "--out", str(bad), "--quiet"]) == 2

    def test_strict_saturation_exit(self, tmp_path):
        path = write(tmp_path, {**REFERENCE, "p_ue": 0.1, "replications": 2, "horizon": 200})
        args = ["--config", str(path), "--command", "simulate", "--quiet"]
        assert main(args) == 0
        assert main(args + ["--strict"]) == 3

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "offloadq", "--config", str(CONFIGS / "reference.yaml"), "--quiet"],
            capture_output=True, text=True, check=False,
        )
        assert proc.returncode == 0
        assert proc.stdout.splitlines()[0] == ",".join(POINT_COLUMNS)
