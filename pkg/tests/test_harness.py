"""Configuration loading, experiment runs and the command line."""

import json
from pathlib import Path

import pytest

from fracstrip.errors import ConfigError, ValidationError
from fracstrip.harness import HEADERS, KINDS, load_config, parse_config, run
from fracstrip.harness.cli import main

GOLDEN = Path(__file__).parent / "golden"

SMALL = {
    "variance": """
[drift]
tag = "sinusoidal"
[variance]
H = 0.3
eps = 0.05
n_times = 3
replicas = 300
r1_eps = [0.05]
""",
    "sde-exit": """
[drift]
tag = "cubic"
[sde-exit]
H = 0.6
eps = 0.02
sigma = 0.05
N = 256
replicas = 1100
h_over_sigma = [1.5, 2.0, 2.5]
""",
    "slope-fit": """
[slope-fit]
H = 0.5
eps = 0.02
sigma = 0.05
N = 256
replicas = 1100
h_over_sigma = [1.5, 2.0, 2.5]
""",
    "spde-exit": """
[spde-exit]
H = 0.7
eps = 0.02
sigma = 0.05
s = 0.3
K = 4
N = 128
replicas = 70
""",
    "schauder": """
[schauder]
K = 256
n_t = 9
""",
    "calibrate-k0": """
[calibrate-k0]
N = 256
replicas = 1100
thresholds = [1.5, 2.0, 2.5, 3.0, 3.5]
""",
}


def write(tmp_path, kind, text=None, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(SMALL[kind] if text is None else text)
    return p


class TestConfig:
    def test_minimal_variance_defaults(self):
        cfg = parse_config("[variance]\nH = 0.3\neps = 0.02\n", "variance")
        assert cfg.params["replicas"] == 10000 and cfg.params["n_times"] == 20
        assert cfg.drift["tag"] == "constant" and cfg.seed == 0
        echo = cfg.echo()
        assert echo["variance"]["H"] == 0.3 and echo["variance"]["eps"] == 0.02

    def test_hurst_out_of_range(self):
        with pytest.raises(ConfigError, match=r"H out of \(0,1\)"):
            parse_config("[variance]\nH = 1.2\neps = 0.02\n", "variance")

    def test_spde_admissibility(self):
        text = "[spde-exit]\nH = 0.3\neps = 0.01\nsigma = 0.05\ns = 0.2\n"
        with pytest.raises(ConfigError, match=r"s=0.2 violates 0 < s < 2H-1/2=0.1"):
            parse_config(text, "spde-exit")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="'replicaz'"):
            parse_config("[variance]\nH = 0.3\neps = 0.02\nreplicaz = 5\n", "variance")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="does not belong"):
            parse_config("[schauder]\nK = 4\n", "variance")

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="'eps'"):
            parse_config("[variance]\nH = 0.3\n", "variance")

    def test_parse_error_position(self):
        with pytest.raises(ConfigError, match=r"line 2, column"):
            parse_config("[variance]\nH = = 0.3\n", "variance")

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="expected an integer"):
            parse_config("[variance]\nH = 0.3\neps = 0.02\nreplicas = 1.5\n", "variance")

    def test_cubic_needs_linear_kind(self):
        with pytest.raises(ConfigError, match="linear"):
            parse_config('[drift]\ntag = "cubic"\n[variance]\nH = 0.3\neps = 0.1\n', "variance")

    def test_bad_drift(self):
        with pytest.raises(ConfigError, match=r"\[drift\]"):
            parse_config('[drift]\nvalue = 0.5\n[variance]\nH = 0.3\neps = 0.1\n', "variance")

    def test_config_error_is_validation_error(self):
        assert issubclass(ConfigError, ValidationError)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml", "variance")

    def test_k0_file(self, tmp_path):
        f = tmp_path / "k0.json"
        f.write_text(json.dumps({"entries": [{"H": 0.5, "gamma": 1.0, "K0": 123.0}]}))
        cfg = parse_config(f'[bounds]\nK0_file = "{f}"\n[variance]\nH = 0.3\neps = 0.1\n',
                           "variance")
        assert cfg.bound_params().K0 == 123.0


class TestRuns:
    @pytest.mark.parametrize("kind", KINDS)
    def test_golden_headers(self, tmp_path, kind):
        cfg = load_config(write(tmp_path, kind), kind)
        cfg.run["out"] = str(tmp_path / "out")
        run(cfg)
        header = (tmp_path / "out" / "results.csv").read_text().splitlines()[0]
        assert header == (GOLDEN / f"{kind}.header.csv").read_text().strip()
        assert header.split(",") == HEADERS[kind]
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["status"] == "ok" and report["csv_schema_version"] == 1
        assert (tmp_path / "out" / "plot.txt").read_text().startswith("# fracstrip plot")

    @pytest.mark.parametrize("kind", ["sde-exit", "spde-exit", "variance"])
    def test_every_row_has_seed(self, tmp_path, kind):
        cfg = load_config(write(tmp_path, kind), kind)
        cfg.run.update(out=str(tmp_path / "o"), seed=42)
        rep = run(cfg)
        assert rep.rows and all(r["seed"] == 42 for r in rep.rows)

    def test_variance_chain_flag(self, tmp_path):
        cfg = load_config(write(tmp_path, "variance"), "variance")
        cfg.run["out"] = str(tmp_path / "o")
        rep = run(cfg)
        assert all(r["chain_ok"] for r in rep.rows)
        assert rep.constants["r1"] >= 0

    def test_sde_slope_row(self, tmp_path):
        cfg = load_config(write(tmp_path, "sde-exit"), "sde-exit")
        cfg.run["out"] = str(tmp_path / "o")
        rep = run(cfg)
        assert rep.rows[-1]["h"] == "slope"

    def test_calibration_file_feeds_bounds(self, tmp_path):
        cfg = load_config(write(tmp_path, "calibrate-k0"), "calibrate-k0")
        cfg.run["out"] = str(tmp_path / "cal")
        rep = run(cfg)
        K0 = rep.constants["K0"]
        assert K0 > 0
        assert all(r["calibrated_bound"] >= r["p_hat"] for r in rep.rows)
        text = SMALL["sde-exit"].replace(
            "[sde-exit]", f'[bounds]\nK0_file = "{tmp_path / "cal" / "calibration.json"}"\n'
                          "[sde-exit]")
        cfg2 = load_config(write(tmp_path, "sde-exit", text, "s.toml"), "sde-exit")
        assert cfg2.bound_params().K0 == K0


class TestCli:
    def _files(self, root):
        return sorted(str(p.relative_to(root)) for p in root.rglob("*"))

    def test_success_and_only_writes_out_dir(self, tmp_path, monkeypatch, capsys):
        cfg = write(tmp_path, "sde-exit")
        monkeypatch.chdir(tmp_path)
        before = set(self._files(tmp_path))
        assert main(["sde-exit", "--config", str(cfg), "--out", "o1", "--seed", "3"]) == 0
        new = set(self._files(tmp_path)) - before
        assert new and all(p.startswith("o1") for p in new)
        assert "rows" in capsys.readouterr().out

    def test_validation_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, "variance", "[variance]\nH = 1.2\neps = 0.02\n")
        assert main(["variance", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "H out of (0,1)" in capsys.readouterr().err

    def test_numerical_exit_code_and_partial_report(self, tmp_path):
        text = SMALL["calibrate-k0"].replace("[1.5, 2.0, 2.5, 3.0, 3.5]", "[20.0, 21.0]")
        cfg = write(tmp_path, "calibrate-k0", text)
        out = tmp_path / "o"
        assert main(["calibrate-k0", "--config", str(cfg), "--out", str(out)]) == 3
        report = json.loads((out / "report.json").read_text())
        assert report["status"].startswith("failed: InsufficientReplicasError")
        assert (out / "results.csv").read_text().startswith("seed,")

    def test_bad_threads_flag(self, tmp_path):
        cfg = write(tmp_path, "schauder")
        assert main(["schauder", "--config", str(cfg), "--threads", "0",
                     "--out", str(tmp_path / "o")]) == 2

    def test_env_overrides(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, "schauder")
        monkeypatch.setenv("FRACSTRIP_OUT", str(tmp_path / "env_out"))
        monkeypatch.setenv("FRACSTRIP_THREADS", "2")
        assert main(["schauder", "--config", str(cfg)]) == 0
        rep = json.loads((tmp_path / "env_out" / "report.json").read_text())
        assert rep["config"]["run"]["threads"] == 2
        # flags beat the environment
        assert main(["schauder", "--config", str(cfg), "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "results.csv").exists()

    def test_bad_env_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FRACSTRIP_THREADS", "many")
        assert main(["schauder", "--config", str(write(tmp_path, "schauder")),
                     "--out", str(tmp_path / "o")]) == 2

    @pytest.mark.parametrize("kind", ["sde-exit", "spde-exit", "calibrate-k0"])
    def test_bitwise_across_runs_and_threads(self, tmp_path, kind):
        cfg = write(tmp_path, kind)
        outs = []
        for i, threads in enumerate(("1", "1", "3")):
            out = tmp_path / f"o{i}"
            assert main([kind, "--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
            outs.append((out / "results.csv").read_bytes())
        assert outs[0] == outs[1] == outs[2]
