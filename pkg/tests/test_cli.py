"""CLI surface: every subcommand end to end, exit codes, checkpoint integrity."""
import json

import numpy as np
import pytest

from ctren.checkpoint import load_checkpoint, save_checkpoint
from ctren.cli import main
from ctren.core import Dims, ValidationError, supply_rate_for
from ctren.gradients import ModelSpec, random_free
from ctren.integrators import SolverConfig
from ctren.sysid import OptimConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset + tiny trained checkpoint shared by the command tests."""
    d = tmp_path_factory.mktemp("cli")
    data = str(d / "data.csv")
    model = str(d / "model.json")
    assert main(["generate", "--out", data, "--n-exp", "2", "--t-end", "1.0",
                 "--noise-std", "0.05", "--sampling", "irregular",
                 "--seed", "3"]) == 0
    assert main(["train", "--data", data, "--mode", "contractive",
                 "--nx", "3", "--nq", "3", "--solver", "rk4", "--steps", "20",
                 "--epochs", "2", "--lr", "0.01", "--seed", "0",
                 "--out", model]) == 0
    return {"dir": d, "data": data, "model": model}


class TestCommands:
    def test_generate_deterministic(self, tmp_path, workdir):
        twin = str(tmp_path / "twin.csv")
        assert main(["generate", "--out", twin, "--n-exp", "2", "--t-end", "1.0",
                     "--noise-std", "0.05", "--sampling", "irregular",
                     "--seed", "3"]) == 0
        assert (workdir["dir"] / "data.csv").read_bytes() == \
               (tmp_path / "twin.csv").read_bytes()

    def test_eval(self, workdir, capsys):
        assert main(["eval", "--model", workdir["model"],
                     "--data", workdir["data"]]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["test_loss"] > 0
        assert len(rep["per_experiment"]) == 2

    def test_verify_certified(self, workdir, tmp_path, capsys):
        out = str(tmp_path / "verify.json")
        assert main(["verify", "--model", workdir["model"], "--empirical",
                     "--pairs", "2", "--out", out]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["lmi_pass"] and rep["certified_rate"] > 0
        assert rep["empirical"]["monotone_V"]
        assert json.loads((tmp_path / "verify.json").read_text()) == rep

    def test_simulate(self, workdir, tmp_path):
        out = str(tmp_path / "traj.csv")
        assert main(["simulate", "--model", workdir["model"], "--x0", "1,0,0",
                     "--t-end", "2.0", "--times", "uniform:10",
                     "--out", out]) == 0
        lines = (tmp_path / "traj.csv").read_text().strip().splitlines()
        assert len(lines) == 11  # header + 10 sample times

    def test_tube(self, workdir, tmp_path):
        out = str(tmp_path / "tube.csv")
        assert main(["tube", "--model", workdir["model"], "--x0", "1,0,0",
                     "--radius", "0.2", "--count", "3", "--t-end", "1.0",
                     "--out", out]) == 0
        header = (tmp_path / "tube.csv").read_text().splitlines()[0]
        assert header == "t,y1_min,y1_max,y2_min,y2_max,p_diameter"


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_missing_file_is_usage_error(self, workdir, capsys):
        assert main(["eval", "--model", "/nonexistent.json",
                     "--data", workdir["data"]]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_bad_x0_is_usage_error(self, workdir, capsys):
        assert main(["simulate", "--model", workdir["model"], "--x0", "1,oops",
                     "--t-end", "1.0", "--out", "/tmp/never.csv"]) == 1
        assert main(["simulate", "--model", workdir["model"], "--x0", "1,2",
                     "--t-end", "1.0", "--out", "/tmp/never.csv"]) == 1
        capsys.readouterr()

    def test_iqc_mode_requires_property(self, workdir, tmp_path, capsys):
        assert main(["train", "--data", workdir["data"], "--mode", "iqc",
                     "--nx", "3", "--nq", "3", "--solver", "rk4",
                     "--steps", "10", "--epochs", "1", "--lr", "0.01",
                     "--seed", "0", "--out", str(tmp_path / "m.json")]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_verify_general_mode_fails_with_code_3(self, workdir, tmp_path,
                                                   capsys):
        # General-mode checkpoints carry no certificate, so verification
        # reports failure (exit 3) rather than a usage or numerical error.
        assert main(["train", "--data", workdir["data"], "--mode", "general",
                     "--nx", "3", "--nq", "3", "--solver", "rk4",
                     "--steps", "10", "--epochs", "1", "--lr", "0.001",
                     "--seed", "1", "--out", str(tmp_path / "g.json")]) == 0
        assert main(["verify", "--model", str(tmp_path / "g.json")]) == 3
        rep = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert not rep["lmi_pass"]

    def test_tampered_checkpoint_rejected_at_load(self, workdir, tmp_path,
                                                  capsys):
        doc = json.loads((workdir["dir"] / "model.json").read_text())
        A = np.array(doc["explicit"]["A"]) + np.eye(3)
        doc["explicit"]["A"] = A.tolist()
        bad = tmp_path / "tampered.json"
        bad.write_text(json.dumps(doc))
        assert main(["verify", "--model", str(bad)]) == 1
        err = capsys.readouterr().err
        assert "A" in err and "re-derived" in err


class TestCheckpointRoundTrip:
    @pytest.mark.parametrize("mode", ["contractive", "iqc", "general"])
    def test_bit_exact_free_params(self, mode, tmp_path, rng):
        sr = supply_rate_for("l2_gain", 2, 1, param=2.0) if mode == "iqc" else None
        spec = ModelSpec(mode=mode, dims=Dims(3, 3, 1, 2), sr=sr)
        free = random_free(spec, rng, zero_bias=False)
        path = str(tmp_path / "ck.json")
        save_checkpoint(path, spec, free, SolverConfig(), OptimConfig(),
                        {"note": "round trip"})
        ck = load_checkpoint(path)
        assert sorted(ck.free) == sorted(free)
        for k in free:
            assert np.array_equal(ck.free[k], np.asarray(free[k]))
        assert ck.spec.mode == mode and ck.spec.dims == spec.dims
        assert ck.metadata == {"note": "round trip"}
        assert (ck.cert is None) == (mode == "general")

    def test_unknown_schema_rejected(self, tmp_path, rng):
        spec = ModelSpec(mode="contractive", dims=Dims(2, 2, 1, 1))
        free = random_free(spec, rng)
        path = str(tmp_path / "ck.json")
        save_checkpoint(path, spec, free, SolverConfig(), OptimConfig())
        doc = json.loads((tmp_path / "ck.json").read_text())
        doc["schema_version"] = 99
        (tmp_path / "ck.json").write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            load_checkpoint(path)
