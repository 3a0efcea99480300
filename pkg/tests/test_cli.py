import json

import numpy as np
import pytest

from tct import cli
from tct.errors import NumericalError
from tct.tensor_core import (
    DimensionProfile,
    SpikedModel,
    assemble_spiked,
    delocalized_vectors,
    generate_noise,
    write_tensor_binary,
    write_tensor_text,
    write_vectors,
)

SMALL = ["--dims", "12", "12", "12"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestUsage:
    def test_no_command(self, capsys):
        code, _, err = run(capsys)
        assert code == cli.EXIT_USAGE and "usage" in err

    def test_unknown_flag(self, capsys):
        assert run(capsys, "lsd", "--bogus")[0] == cli.EXIT_USAGE

    def test_bad_config_value(self, capsys):
        code, _, err = run(capsys, "simulate", *SMALL, "--reps", "0")
        assert code == cli.EXIT_USAGE and "reps" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "test-align", "--tensor", str(tmp_path / "none"), "--vectors", "v")
        assert code == cli.EXIT_USAGE

    def test_numerical_failure(self, capsys, monkeypatch):
        def boom(args):
            raise NumericalError("diverged", where=1j)

        monkeypatch.setattr(cli, "cmd_lsd", boom)
        code, _, err = run(capsys, "lsd")
        assert code == cli.EXIT_NUMERICAL and "diverged" in err

    def test_bad_seed_env(self, capsys, monkeypatch):
        monkeypatch.setenv("TCT_SEED", "abc")
        assert run(capsys, "power", *SMALL, "--reps", "2", "--betas", "0")[0] == cli.EXIT_USAGE


class TestLsd:
    def test_output(self, capsys):
        code, out, _ = run(capsys, "lsd", "--points", "11", "--eta", "1e-6")
        assert code == 0
        lines = out.splitlines()
        header = dict(item.split("=") for item in lines[0][2:].split())
        assert float(header["zeta"]) == pytest.approx(1.63299, abs=1e-3)
        assert float(header["m2"]) == pytest.approx(2 / 3, abs=1e-10)
        assert header["point_mass"] == "False"
        assert lines[1] == "E,density"
        E, rho = map(float, lines[7].split(","))
        assert E == pytest.approx(0.0, abs=1e-12)
        assert rho == pytest.approx(0.389848, abs=1e-4)

    def test_ratios_and_file(self, capsys, tmp_path):
        path = tmp_path / "lsd.csv"
        code, out, _ = run(capsys, "lsd", "--ratios", "2", "1", "1", "--range", "-1", "1", "--points", "5",
                           "-o", str(path))
        assert code == 0 and out == ""
        assert "point_mass=True" in path.read_text().splitlines()[0]


class TestLimits:
    def test_table(self, capsys):
        code, out, _ = run(capsys, "limits", "--f", "x2", "cos", "--dist", "uniform", "--vectors", "localized")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "f,xi,sigma2,sigma"
        f, xi, s2, s = lines[2].split(",")
        assert f == "cos"
        assert float(xi) == pytest.approx(0.0429, rel=0.05)
        assert float(s2) == pytest.approx(0.1723, rel=0.05)

    def test_kappa_override(self, capsys):
        _, a, _ = run(capsys, "limits", "--f", "x2", "--vectors", "localized", "--kappa4", "0")
        _, b, _ = run(capsys, "limits", "--f", "x2", "--vectors", "localized")
        assert a == b
        _, c, _ = run(capsys, "limits", "--f", "x2", "--vectors", "localized", "--kappa4", "-1.2")
        assert float(c.splitlines()[1].split(",")[2]) == pytest.approx(1.0667, rel=1e-3)

    def test_probe(self, capsys):
        code, out, _ = run(capsys, "limits", "--probe", "3", "0.5")
        assert code == 0 and out.startswith("z=(3+0.5j)")
        assert "mu=" in out and "C(z,conj z)=" in out


class TestSpectrumCommand:
    def test_files(self, capsys, tmp_path):
        base = str(tmp_path / "spec")
        code, _, _ = run(capsys, "spectrum", *SMALL, "--reps", "2", "--bins", "10", "--seed", "3", "-o", base)
        assert code == 0
        ev = np.loadtxt(base + "_eigenvalues.csv", skiprows=1)
        assert ev.size == 36 and np.all(np.diff(ev) >= 0)
        hist = (tmp_path / "spec_histogram.csv").read_text().splitlines()
        assert hist[0].startswith("# tv=")
        assert hist[1] == "left,right,empirical,lsd"
        assert len(hist) == 12


class TestSimulate:
    def test_table1_seed_env(self, capsys, monkeypatch):
        args = ("simulate", "--kind", "table1", *SMALL, "--reps", "3", "--f", "x2", "--threads", "1")
        _, a, _ = run(capsys, *args, "--seed", "7")
        monkeypatch.setenv("TCT_SEED", "7")
        _, b, _ = run(capsys, *args)
        assert a == b
        assert a.splitlines()[0] == "f,dist,vector_type,empirical_mean,empirical_var,limit_mean,limit_var"

    def test_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "qq.cfg"
        cfg.write_text("kind = qq\ndims = 12 12 12\nreps = 4\nf = exp\nseed = 2\n")
        code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--kind", "qq")
        assert code == 0
        assert len(out.splitlines()) == 5

    def test_power(self, capsys, tmp_path):
        path = tmp_path / "power.csv"
        code, _, _ = run(capsys, "power", *SMALL, "--reps", "3", "--betas", "0", "3", "-o", str(path))
        assert code == 0
        lines = path.read_text().splitlines()
        assert lines[0] == "beta,empirical_power,theoretical_power,mean_normalized"
        assert lines[2].split(",")[1] == "1"


@pytest.fixture
def tensor_files(tmp_path):
    p = DimensionProfile([20, 20, 20])
    vecs = delocalized_vectors(p)
    T0 = assemble_spiked(SpikedModel(p, (3.0,), (vecs,)), generate_noise(p, "gaussian", 0))
    T1 = assemble_spiked(SpikedModel(p, (3.0,), (vecs,)), generate_noise(p, "gaussian", 1))
    paths = dict(t0=tmp_path / "t0.txt", t1=tmp_path / "t1.bin", v=tmp_path / "v.txt")
    write_tensor_text(paths["t0"], T0)
    write_tensor_binary(paths["t1"], T1)
    write_vectors(paths["v"], vecs)
    return {k: str(v) for k, v in paths.items()}


class TestFileTests:
    def test_align(self, capsys, tensor_files):
        code, out, _ = run(capsys, "test-align", "--tensor", tensor_files["t0"], "--vectors", tensor_files["v"])
        assert code == 0
        kv = dict(line.split("=", 1) for line in out.splitlines())
        assert kv["reject"] == "True"
        assert float(kv["p_value"]) < 1e-6

    def test_align_json(self, capsys, tensor_files):
        code, out, _ = run(capsys, "test-align", "--tensor", tensor_files["t1"], "--vectors", tensor_files["v"],
                           "--json", "--alpha", "0.01")
        assert code == 0
        rep = json.loads(out)
        assert rep["alpha"] == 0.01 and rep["reject"] is True

    def test_align_mismatch(self, capsys, tensor_files, tmp_path):
        v = tmp_path / "v2.txt"
        write_vectors(v, delocalized_vectors(DimensionProfile([20, 20, 21])))
        assert run(capsys, "test-align", "--tensor", tensor_files["t0"], "--vectors", str(v))[0] == cli.EXIT_USAGE

    def test_match(self, capsys, tensor_files):
        code, out, _ = run(capsys, "test-match", "--tensor0", tensor_files["t0"], "--tensor1", tensor_files["t1"])
        assert code == 0
        assert "[component 1]" in out and "[overall]" in out
        assert "reject=True" in out.split("[overall]")[1]
