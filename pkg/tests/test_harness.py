import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from ricciotto import cli
from ricciotto import harness as h

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

MINIMAL = {
    "geometry": {"kind": "warped-circle", "n": 16, "phi": {"mean": 1.0, "cos": [0.1]}},
    "flow": {"t_final": 0.01, "intervals": 4},
    "backward": [{"kind": "conjugate-heat"}],
}


def with_entry(path, value):
    data = json.loads(json.dumps(MINIMAL))
    *head, last = path.split(".")
    node = data
    for k in head:
        node = node[int(k)] if k.isdigit() else node[k]
    node[last] = value
    return data


class TestParsing:
    def test_minimal(self):
        cfg = h.parse_config(MINIMAL)
        assert cfg.geometry.n == 16
        assert cfg.backward[0].kind == "conjugate-heat"

    @pytest.mark.parametrize("path,value,field", [
        ("geometry.n", 4, "geometry.n"),
        ("geometry.n", "many", "geometry.n"),
        ("geometry.kind", "torus", "geometry.kind"),
        ("flow.t_final", -1.0, "flow.t_final"),
        ("flow.bogus", 1, "flow.bogus"),
        ("backward.0.kind", "heat", "backward[0].kind"),
        ("backward.0.tau0", 0.0, "backward[0].tau0"),
    ])
    def test_error_names_field(self, path, value, field):
        with pytest.raises(h.ConfigError) as info:
            h.parse_config(with_entry(path, value))
        assert info.value.field == field

    def test_syntax_error(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[geometry\nkind = 1\n")
        with pytest.raises(h.ConfigError) as info:
            h.load_config(p)
        assert info.value.field == "<syntax>"

    def test_digest_tracks_content(self):
        a = h.parse_config(MINIMAL)
        b = h.parse_config(with_entry("flow.t_final", 0.02))
        assert a.digest() == h.parse_config(MINIMAL).digest()
        assert a.digest() != b.digest()

    @pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.toml")))
    def test_shipped_scenarios_parse(self, name):
        h.load_config(SCENARIOS / name)


class TestScenarios:
    def test_round_berger_exact(self, tmp_path):
        cfg = h.load_config(SCENARIOS / "round_berger.toml")
        man = h.run_scenario(cfg, tmp_path, deterministic=True)
        assert man.passed and not man.errors
        residuals = [c for c in man.checks if "residual" in c.name]
        assert residuals and all(c.gated and c.actual < 1e-8 for c in residuals)

    def test_cylinder_closed_form(self, tmp_path):
        cfg = h.load_config(SCENARIOS / "cylinder.toml")
        man = h.run_scenario(cfg, tmp_path, stages=("flow",), deterministic=True)
        closed = [c for c in man.checks if "closed form" in c.name]
        assert closed and all(c.passed for c in closed)

    def test_deterministic_bytes(self, tmp_path):
        cfg = h.load_config(SCENARIOS / "warped_circle.toml")
        a = h.run_scenario(cfg, tmp_path / "a", deterministic=True)
        b = h.run_scenario(h.load_config(SCENARIOS / "warped_circle.toml"), tmp_path / "b", deterministic=True)
        assert a.output_hash == b.output_hash
        for name in a.artifacts:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_complete(self, tmp_path):
        cfg = h.load_config(SCENARIOS / "warped_circle.toml")
        man = h.run_scenario(cfg, tmp_path, deterministic=True)
        names = [c.name for c in man.checks]
        assert len(names) == len(set(names))
        d = json.loads((tmp_path / "manifest.json").read_text())
        assert set(d["summary"]) == set(names)
        assert d["config_hash"] == cfg.digest()
        for name in man.artifacts:
            assert (tmp_path / name).exists()

    def test_stage_error_recorded(self, tmp_path, monkeypatch):
        def broken(*args):
            raise FloatingPointError("overflow")

        monkeypatch.setattr(h, "_conjugate_heat_stage", broken)
        man = h.run_scenario(h.parse_config(MINIMAL), tmp_path, deterministic=True)
        assert not man.passed
        assert man.errors[0]["stage"] == "backward[0]"
        assert (tmp_path / "manifest.json").exists()


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("berger")
    h.run_scenario(h.load_config(SCENARIOS / "round_berger.toml"), out, deterministic=True)
    return out


class TestExport:
    def test_csv_schema(self, outputs):
        table = h.read_csv(outputs / "backward0_conjugate_heat.csv")
        for col in ("t", "S", "I", "W", "tau", "tau_hat", "tauhatR"):
            assert col in table
        assert any(c.startswith("residual_") for c in table)
        assert np.all(np.diff(table["t"]) != 0)

    def test_json_round_trip(self, outputs, tmp_path):
        rep = h.read_json(outputs / "flow.json")
        h.write_json(rep, tmp_path / "again.json")
        again = h.read_json(tmp_path / "again.json")
        assert again.columns() == rep.columns()
        for c in rep.columns():
            np.testing.assert_array_equal(again.table[c], rep.table[c])
        csv_table = h.read_csv(outputs / "flow.csv")
        for c in rep.columns():
            np.testing.assert_array_equal(csv_table[c], rep.table[c])

    def test_gnuplot_script_structure(self, outputs):
        script = (outputs / "flow.gp").read_text().splitlines()
        cols = list(h.read_csv(outputs / "flow.csv"))
        plots = [line for line in script if line.startswith("plot ")]
        assert len(plots) == len(cols) - 1
        assert all("'flow.csv'" in line for line in plots)

    @pytest.mark.skipif(shutil.which("gnuplot") is None, reason="gnuplot not installed")
    def test_gnuplot_runs(self, outputs):
        subprocess.run(["gnuplot", "flow.gp"], cwd=outputs, check=True)
        assert (outputs / "flow.png").stat().st_size > 0

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            h.export_report(h.Report("x", {"t": [0.0]}), tmp_path, ("xlsx",))


class TestCli:
    def test_verify_fast_passes(self, tmp_path):
        assert cli.main(["verify", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "verify.json").read_text())["passed"]

    def test_tightened_tolerances_fail(self, tmp_path):
        assert cli.main(["verify", "--out", str(tmp_path), "--tolerance-scale", "100"]) == 1
        assert json.loads((tmp_path / "verify.json").read_text())["failures"]

    def test_bad_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text('[geometry]\nkind = "warped-circle"\nn = 3\n[flow]\nt_final = 0.1\n')
        assert cli.main(["flow", "--config", str(p), "--out", str(tmp_path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["field"] == "geometry.n"

    def test_missing_config(self, tmp_path):
        assert cli.main(["flow", "--out", str(tmp_path)]) == 2

    def test_flow_command(self, tmp_path):
        code = cli.main(["flow", "--config", str(SCENARIOS / "round_berger.toml"),
                         "--out", str(tmp_path), "--deterministic"])
        assert code == 0
        assert (tmp_path / "manifest.json").exists()
