import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from transnoise import __version__
from transnoise.cli import ConfigError, initial_state_parser, main, parse_sweep, read_config
from transnoise.montecarlo import THREADS_ENV
from transnoise.states import werner_state


def run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = main([*argv, "-o", str(out)])
    return code, out


def load(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    names = lines[0].split(",")
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], ndmin=2)
    return dict(zip(names, values.T))


class TestParseSweep:
    def test_linear_default(self):
        assert_allclose(parse_sweep("0..1"), np.linspace(0, 1, 11))

    def test_counts(self):
        assert_allclose(parse_sweep("0.01..100:log5"), [0.01, 0.1, 1, 10, 100])
        assert_allclose(parse_sweep("1..2:3"), [1, 1.5, 2])

    def test_lists(self):
        assert_allclose(parse_sweep("0.5, 2,3"), [0.5, 2, 3])
        assert_allclose(parse_sweep("7"), [7])

    @pytest.mark.parametrize("bad", ["a..b", "0..1:x", "0..1:0", "0..1:log3", "1,,2"])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            parse_sweep(bad)


class TestStateParser:
    def test_named(self):
        psi = initial_state_parser("bell-psi-plus")
        assert_allclose(psi[[0, 0, 3, 3], [0, 3, 0, 3]], 0.5)
        assert_allclose(initial_state_parser("werner:1"), werner_state(1.0))
        assert_allclose(initial_state_parser("bell-phi-minus"), werner_state(1.0))
        assert_allclose(initial_state_parser("mixed", qubits=1), np.eye(2) / 2)
        assert_allclose(initial_state_parser("mixed"), np.eye(4) / 4)

    def test_bloch(self):
        rho = initial_state_parser("bloch:-0.577,0.577,0.577")
        assert_allclose(rho, 0.5 * np.array([[1.577, -0.577 - 0.577j], [-0.577 + 0.577j, 0.423]]))
        assert_allclose(initial_state_parser("0,0,1"), np.diag([1, 0]))

    def test_tetrahedron(self):
        rho = initial_state_parser("0.1,0.2,-0.3", qubits=2)
        assert rho.shape == (4, 4)
        assert_allclose(initial_state_parser("tetra:-1,-1,-1"), werner_state(1.0), atol=1e-15)

    @pytest.mark.parametrize(
        "spec, message",
        [
            ("bloch:1,1,0", "|n| <= 1"),
            ("tetra:1,1,1", "outside the Bell tetrahedron"),
            ("werner:1.5", "0 <= p <= 1"),
            ("werner:x", "not a number"),
            ("bloch:1,0", "needs 3 components"),
            ("ghz", "not a list of numbers"),
        ],
    )
    def test_errors_name_constraint(self, spec, message):
        with pytest.raises(ValueError, match=message.replace("|", r"\|")):
            initial_state_parser(spec)


class TestCommands:
    def test_region(self, tmp_path):
        code, out = run(tmp_path, "region", "--omega-range", "0.001,0.1,0.5")
        assert code == 0
        data = load(out)
        assert abs(data["gamma1"][0] - 2) < 1e-2
        assert np.isnan(data["gamma1"][2])

    def test_simulate_analytic_matches_mc(self, tmp_path):
        common = ["simulate", "--omega", "1", "--gamma", "0.5", "--t-max", "5", "--dt", "0.05"]
        assert main([*common, "-o", str(tmp_path / "a.csv")]) == 0
        assert main([*common, "--solver", "mc", "--realizations", "20000", "-o", str(tmp_path / "m.csv")]) == 0
        a, m = load(tmp_path / "a.csv"), load(tmp_path / "m.csv")
        for col in ("nx", "ny", "nz"):
            assert np.all(np.abs(a[col] - m[col]) <= np.maximum(3 * m["stderr"], 5e-3))

    def test_simulate_two_qubit(self, tmp_path):
        code, out = run(tmp_path, "simulate", "--state", "werner:0.8", "--t-max", "2")
        assert code == 0
        data = load(out)
        assert_allclose([data["c11"], data["c22"], data["c33"]], -0.8, atol=1e-10)
        assert_allclose(data["a1"], 0.0, atol=1e-12)

    def test_dump_noise(self, tmp_path):
        dump = tmp_path / "noise.csv"
        code, _ = run(tmp_path, "simulate", "--solver", "mc", "--noise", "ou", "--realizations", "10",
                      "--t-max", "1", "--dump-noise", str(dump))
        assert code == 0
        assert dump.read_text().splitlines()[0] == "t,B"
        assert len(dump.read_text().splitlines()) == 202

    def test_correlations(self, tmp_path):
        code, out = run(tmp_path, "correlations", "--gamma", "0.01", "--t-max", "3")
        assert code == 0
        data = load(out)
        assert_allclose(data["negativity"][0], 1.0)
        assert_allclose(data["discord"][0], 1.0)
        assert_allclose(data["mutual_information"][0], 2.0)
        assert np.all((data["negativity"] >= 0) & (data["negativity"] <= 1 + 1e-12))

    def test_correlations_mc(self, tmp_path):
        code, out = run(tmp_path, "correlations", "--noise", "ou", "--env", "independent", "--realizations", "500",
                        "--t-max", "1")
        assert code == 0
        assert np.all(np.isfinite(load(out)["discord"]))

    def test_nonmark(self, tmp_path):
        code, out = run(tmp_path, "nonmark", "--gamma-list", "0.5,1", "--measure", "both")
        assert code == 0
        data = load(out)
        assert np.all(data["blp"] > 0)
        assert data["rhp"][0] > 0 and data["rhp"][1] == 0
        assert np.all(np.abs(data["blp_nz"]) < 1e-3)
        assert np.all(data["converged"] == 1)

    def test_compare(self, tmp_path):
        code, out = run(tmp_path, "compare", "--gamma-rtn-list", "1,1.6", "--realizations", "5000", "--t-max", "5")
        assert code == 0
        data = load(out)
        assert data["avg_fidelity_complement"][0] > data["avg_fidelity_complement"][1]

    def test_trajectory(self, tmp_path):
        code, out = run(tmp_path, "trajectory", "--gamma", "2", "--t-max", "1", "--dt", "0.01")
        assert code == 0
        assert set(np.unique(load(out)["B"])) <= {-1.0, 1.0}

    def test_stdout(self, capsys):
        assert main(["region", "--omega-range", "0.1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "# command=region"
        assert lines[1] == f"# version={__version__}"
        assert lines[-2] == "omega,gamma1,gamma2"

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "transnoise", "region", "--omega-range", "0.2"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "omega,gamma1,gamma2" in proc.stdout


class TestExitCodes:
    def test_bad_state(self, tmp_path, capsys):
        code, _ = run(tmp_path, "simulate", "--state", "bloch:2,0,0")
        assert code == 2
        assert "|n| <= 1" in capsys.readouterr().err

    def test_negative_rate(self, tmp_path):
        assert run(tmp_path, "simulate", "--gamma", "-1")[0] == 2

    def test_analytic_ou_rejected(self, tmp_path):
        assert run(tmp_path, "simulate", "--noise", "ou", "--solver", "analytic")[0] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("omega_range=0.1\ncolour=blue\n")
        assert run(tmp_path, "region", "--omega-range", "0.1", "--config", str(cfg))[0] == 2
        assert "colour" in capsys.readouterr().err

    def test_wrong_command_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("command=simulate\n")
        assert run(tmp_path, "region", "--omega-range", "0.1", "--config", str(cfg))[0] == 2

    def test_unwritable_output(self, tmp_path):
        assert main(["region", "--omega-range", "0.1", "-o", str(tmp_path / "missing" / "x.csv")]) == 2

    def test_not_converged(self, tmp_path, capsys):
        code, out = run(tmp_path, "nonmark", "--gamma-list", "0.1", "--measure", "rhp", "--max-steps", "100")
        assert code == 3
        assert load(out)["converged"] == 0
        assert "not converged" in capsys.readouterr().err


class TestConfig:
    def test_read_config(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# a comment\n# gamma=2\nomega = 0.5\n\nt-max=3\nt,B\n1,2\n")
        assert read_config(path) == {"gamma": "2", "omega": "0.5", "t_max": "3"}

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("gamma=2\nt_max=1\n")
        code, out = run(tmp_path, "simulate", "--config", str(cfg), "--gamma", "3")
        assert code == 0
        text = out.read_text()
        assert "# gamma=3.0" in text and "# t_max=1.0" in text

    @pytest.mark.parametrize(
        "argv",
        [
            ["simulate", "--solver", "mc", "--noise", "ou", "--realizations", "300", "--t-max", "1",
             "--state", "bloch:-0.577,0.577,0.577", "--seed", "0x2a"],
            ["correlations", "--gamma", "0.2", "--t-max", "1", "--env", "independent"],
            ["nonmark", "--gamma-list", "0.5..1:2", "--measure", "rhp"],
            ["compare", "--gamma-rtn-list", "1", "--realizations", "300", "--t-max", "1", "--optimize",
             "--search", "0.5..2"],
            ["region", "--omega-range", "0..0.36:5"],
            ["trajectory", "--noise", "ou", "--gamma", "3", "--t-max", "1"],
        ],
    )
    def test_output_header_reproduces_output(self, tmp_path, argv):
        code, first = run(tmp_path, *argv, name="first.csv")
        assert code in (0, 3)
        second = tmp_path / "second.csv"
        assert main([argv[0], "--config", str(first), "-o", str(second)]) == code
        assert first.read_bytes() == second.read_bytes()

    def test_thread_count_independent(self, tmp_path, monkeypatch):
        argv = ["simulate", "--solver", "mc", "--noise", "ou", "--realizations", "10000", "--t-max", "0.5"]
        monkeypatch.setenv(THREADS_ENV, "1")
        _, a = run(tmp_path, *argv, name="a.csv")
        monkeypatch.setenv(THREADS_ENV, "3")
        _, b = run(tmp_path, *argv, name="b.csv")
        assert a.read_bytes() == b.read_bytes()
