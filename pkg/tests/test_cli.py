import json

import numpy as np
import pytest

import mcdl
from mcdl.cli import main


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "ising04.json"
    g = mcdl.build_grid(6, 6)
    mcdl.save_model(path, mcdl.homogeneous_model(g, 0.4), "homogeneous")
    return str(path)


def run(*argv) -> int:
    return main(list(argv))


class TestGenerate:
    def test_writes_samples(self, model_file, tmp_path, capsys):
        out = str(tmp_path / "run1.smp")
        code = run("generate", "--model", model_file, "--out", out, "--n", "12",
                   "--burn-in", "50", "--spacing", "2", "--seed", "7")
        assert code == 0
        model, _ = mcdl.load_model(model_file)
        samples = mcdl.read_samples(out, model.graph)
        assert samples.n == 12
        assert "wrote 12 configurations" in capsys.readouterr().out

    def test_byte_identical_reruns(self, model_file, tmp_path):
        a, b = str(tmp_path / "a.smp"), str(tmp_path / "b.smp")
        for out in (a, b):
            assert run("generate", "--model", model_file, "--out", out, "--n", "5",
                       "--burn-in", "10", "--spacing", "1", "--seed", "3") == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_subset_all(self, model_file, tmp_path):
        out = str(tmp_path / "full.smp")
        assert run("generate", "--model", model_file, "--out", out, "--n", "1",
                   "--burn-in", "30", "--seed", "2", "--subset", "all") == 0
        model, _ = mcdl.load_model(model_file)
        samples = mcdl.read_samples(out, model.graph)
        assert samples.configs.shape == (1, 36)


@pytest.fixture(scope="module")
def sample_file(model_file, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "mid.smp")
    assert run("generate", "--model", model_file, "--out", out, "--n", "40",
               "--burn-in", "100", "--spacing", "3", "--seed", "21") == 0
    return out


@pytest.fixture(scope="module")
def config_file(model_file, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "full.smp")
    assert run("generate", "--model", model_file, "--out", out, "--n", "1",
               "--burn-in", "100", "--seed", "22", "--subset", "all") == 0
    return out


class TestEstimate:
    def test_report_json(self, model_file, sample_file, tmp_path, capsys):
        out = str(tmp_path / "report.json")
        assert run("estimate", "--model", model_file, "--samples", sample_file,
                   "--out", out) == 0
        doc = json.loads(open(out).read())
        assert doc["converged"] is True
        assert doc["grad_inf_norm"] < 1e-6
        assert len(doc["theta"]) == 1
        assert "converged" in capsys.readouterr().out


class TestSweeps:
    def test_sweep_csv(self, model_file, sample_file, tmp_path):
        out = str(tmp_path / "sweep.csv")
        assert run("sweep", "--model", model_file, "--samples", sample_file,
                   "--out", out, "--lo", "0.3", "--hi", "0.5", "--count", "21") == 0
        lines = open(out).read().strip().splitlines()
        assert lines[1] == "theta,H_nats,H_bits_per_site"
        assert len(lines) == 21 + 3
        assert lines[-1].startswith("# argmin=")

    def test_sweep_deterministic(self, model_file, sample_file, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        for out in (a, b):
            assert run("sweep", "--model", model_file, "--samples", sample_file,
                       "--out", out, "--lo", "0.3", "--hi", "0.5", "--count", "11") == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_spatial_sweep(self, model_file, config_file, tmp_path):
        out = str(tmp_path / "spatial.csv")
        assert run("spatial-sweep", "--model", model_file, "--config", config_file,
                   "--out", out, "--lo", "0.2", "--hi", "0.6", "--count", "9") == 0
        lines = open(out).read().strip().splitlines()
        assert len(lines) == 9 + 3

    def test_spatial_sweep_needs_full_config(self, model_file, sample_file, tmp_path):
        out = str(tmp_path / "bad.csv")
        code = run("spatial-sweep", "--model", model_file, "--config", sample_file,
                   "--out", out, "--lo", "0.2", "--hi", "0.6", "--count", "5")
        assert code == 2


class TestMpl:
    def test_report(self, tmp_path, capsys):
        # a 6x6 configuration can be separable (optimum at infinity), so use
        # a grid with enough interior sites for a well-posed single-config fit
        model_path = str(tmp_path / "big.json")
        g = mcdl.build_grid(12, 12)
        mcdl.save_model(model_path, mcdl.homogeneous_model(g, 0.4), "homogeneous")
        config_path = str(tmp_path / "big.smp")
        assert run("generate", "--model", model_path, "--out", config_path, "--n", "1",
                   "--burn-in", "200", "--seed", "5", "--subset", "all") == 0
        out = str(tmp_path / "mpl.json")
        assert run("mpl", "--model", model_path, "--config", config_path,
                   "--out", out) == 0
        doc = json.loads(open(out).read())
        assert doc["converged"] is True
        assert doc["provenance"]["mode"] == "single-site"
        assert 0.0 < doc["theta"][0] < 1.0
        assert "mpl: estimate" in capsys.readouterr().out


class TestCodecCommands:
    def test_encode_decode_roundtrip(self, model_file, sample_file, tmp_path):
        bits = str(tmp_path / "x.bits")
        decoded = str(tmp_path / "x.cfg")
        assert run("encode", "--model", model_file, "--samples", sample_file,
                   "--index", "3", "--out", bits) == 0
        assert run("decode", "--model", model_file, "--bits", bits,
                   "--samples", sample_file, "--index", "3", "--out", decoded) == 0
        model, _ = mcdl.load_model(model_file)
        samples = mcdl.read_samples(sample_file, model.graph)
        xu, _ = samples.split()
        text = open(decoded).read().strip().splitlines()
        spins = np.where(np.frombuffer(text[-1].encode(), dtype=np.uint8) == ord("+"), 1, -1)
        assert np.array_equal(spins, xu[3])

    def test_decode_wrong_index_fails(self, model_file, sample_file, tmp_path):
        bits = str(tmp_path / "y.bits")
        decoded = str(tmp_path / "y.cfg")
        assert run("encode", "--model", model_file, "--samples", sample_file,
                   "--index", "1", "--out", bits) == 0
        code = run("decode", "--model", model_file, "--bits", bits,
                   "--samples", sample_file, "--index", "2", "--out", decoded)
        assert code == 2


class TestOracleCheck:
    def test_passes(self, capsys):
        assert run("oracle-check", "--trials", "25", "--max-u", "8") == 0
        assert "25/25 passed" in capsys.readouterr().out


class TestExitCodes:
    def test_usage_error_is_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("sweep", "--model", "missing.json")  # missing required flags
        assert exc.value.code == 1

    def test_unknown_command_is_1(self):
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 1

    def test_runtime_error_is_2(self, tmp_path):
        code = run("generate", "--model", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "x.smp"), "--n", "1")
        assert code == 2
