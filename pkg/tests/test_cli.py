import json

import numpy as np
import pytest

from vidon import cli
from vidon import dataset as D
from vidon import train as tr


def write_cfg(tmp_path, **over):
    raw = {
        "problem": "allen-cahn",
        "seed": 5,
        "out": str(tmp_path / "run"),
        "sensors": {"kind": "regular", "base_grid": [5, 5]},
        "data": {"n_train": 6, "n_val": 2, "n_test": 3, "n_time": 3,
                 "test_grid": [5, 5], "test_n_time": 3},
        "model": {"type": "vidon", "d_enc": 8, "heads": 2, "p": 6, "head_out": 4,
                  "encoder_hidden": [], "head_hidden": [8], "combiner_hidden": [8],
                  "trunk_hidden": [8], "activation": "tanh",
                  "trunk_in_scale": [1.0, 1.0, 20.0]},
        "train": {"lr0": 2e-3, "halve_at": [6], "max_epochs": 8, "batch_size": 3},
    }
    raw.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


class TestGenData:
    def test_smoke_and_determinism(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert cli.main(["gen-data", "--config", str(cfg), "--threads", "1"]) == 0
        out = capsys.readouterr().out
        assert "resolved config" in out and "sensor count range" in out
        first = (tmp_path / "run" / "train.bin").read_bytes()
        assert cli.main(["gen-data", "--config", str(cfg), "--threads", "2"]) == 0
        assert (tmp_path / "run" / "train.bin").read_bytes() == first

    def test_invalid_sensor_kind_exit_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, sensors={"kind": "hexgrid"})
        assert cli.main(["gen-data", "--config", str(cfg)]) == 2
        assert "hexgrid" in capsys.readouterr().err

    def test_unknown_key_exit_2(self, tmp_path):
        cfg = write_cfg(tmp_path, extra_section={"a": 1})
        assert cli.main(["gen-data", "--config", str(cfg)]) == 2

    def test_ranges_match_sensor_module(self, tmp_path):
        cfg = write_cfg(tmp_path, sensors={"kind": "missing", "base_grid": [5, 5]})
        assert cli.main(["gen-data", "--config", str(cfg)]) == 0
        meta = D.load_meta(tmp_path / "run")
        assert tuple(meta.sensor_ranges) == (20, 25)


class TestTrainEval:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert cli.main(["gen-data", "--config", str(cfg)]) == 0
        assert cli.main(["train", "--config", str(cfg)]) == 0
        return cfg, tmp_path / "run"

    def test_train_writes_artifacts(self, trained):
        _, run = trained
        assert (run / "checkpoint.ckpt").exists()
        lines = (run / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 9  # header + 8 epochs

    def test_missing_dataset_exit_3(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert cli.main(["train", "--config", str(cfg)]) == 3

    def test_resume_continues_epoch_numbering(self, trained, tmp_path):
        cfg, run = trained
        ckpt = tr.load_checkpoint(run / "checkpoint.ckpt")
        longer = write_cfg(tmp_path, train={"lr0": 2e-3, "halve_at": [6],
                                            "max_epochs": 12, "batch_size": 3})
        assert cli.main(["train", "--config", str(longer), "--resume",
                         str(run / "checkpoint.ckpt")]) == 0
        lines = (run / "metrics.csv").read_text().strip().splitlines()
        first_epoch = int(lines[1].split(",")[0])
        assert first_epoch == ckpt.epoch + 1
        assert int(lines[-1].split(",")[0]) == 11

    def test_eval_val_matches_stored_best(self, trained, capsys):
        _, run = trained
        ckpt = tr.load_checkpoint(run / "checkpoint.ckpt")
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                         "--data", str(run), "--split", "val"]) == 0
        out = capsys.readouterr().out
        json_line = next(l for l in out.splitlines() if l.startswith("{"))
        result = json.loads(json_line)
        assert result["mean_rel_l2"] == pytest.approx(ckpt.val_rel_l2, abs=1e-12)
        assert set(result) == {"mean_rel_l2", "std_rel_l2", "n"}

    def test_eval_writes_json(self, trained):
        _, run = trained
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                         "--data", str(run)]) == 0
        data = json.loads((run / "eval_test.json").read_text())
        assert data["n"] == 3 and 0 <= data["mean_rel_l2"] < 10

    def test_eval_sensor_override(self, trained, capsys):
        _, run = trained
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                         "--data", str(run), "--sensors", "variable-random"]) == 0
        out = capsys.readouterr().out
        assert "re-sampled inputs" in out
        assert (run / "eval_test_sensors-variable-random.json").exists()

    def test_eval_missing_checkpoint_exit_3(self, tmp_path):
        assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                         "--data", str(tmp_path)]) == 3


class TestVerifyCmd:
    def test_invariance_suite_passes(self, capsys):
        assert cli.main(["verify", "--suite", "invariance"]) == 0
        out = capsys.readouterr().out
        assert "[PASS] permutation invariance" in out

    def test_pipeline_determinism_end_to_end(self, tmp_path):
        """gen-data -> train -> eval twice: identical metrics JSON."""
        results = []
        for tag in ("a", "b"):
            base = tmp_path / tag
            base.mkdir()
            cfg = write_cfg(base)
            assert cli.main(["gen-data", "--config", str(cfg)]) == 0
            assert cli.main(["train", "--config", str(cfg)]) == 0
            assert cli.main(["eval", "--checkpoint", str(base / "run" / "checkpoint.ckpt"),
                             "--data", str(base / "run")]) == 0
            results.append((base / "run" / "eval_test.json").read_bytes())
        assert results[0] == results[1]


class TestExitCodes:
    def test_verify_failure_exits_1(self, monkeypatch, capsys):
        from vidon.verify import CheckResult

        monkeypatch.setattr("vidon.verify.run_suite",
                            lambda name, seed=0: [CheckResult("forced", False, "x")])
        assert cli.main(["verify", "--suite", "invariance"]) == 1
        assert "[FAIL]" in capsys.readouterr().out

    def test_unknown_split_file_missing(self, tmp_path):
        assert cli.main(["eval", "--checkpoint", "nope.ckpt", "--data",
                         str(tmp_path)]) == 3


class TestDeeponetBaseline:
    def test_train_eval_roundtrip(self, tmp_path):
        cfg = write_cfg(tmp_path, model={
            "type": "deeponet", "p": 6, "branch_hidden": [8], "trunk_hidden": [8],
            "trunk_in_scale": [1.0, 1.0, 20.0]})
        assert cli.main(["gen-data", "--config", str(cfg)]) == 0
        assert cli.main(["train", "--config", str(cfg)]) == 0
        run = tmp_path / "run"
        ckpt = tr.load_checkpoint(run / "checkpoint.ckpt")
        from vidon.model import DeeponetSpec
        assert isinstance(ckpt.spec, DeeponetSpec)
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                         "--data", str(run)]) == 0
        data = json.loads((run / "eval_test.json").read_text())
        assert data["n"] == 3


class TestNavierStokesPipeline:
    def test_small_ns_dataset_and_field_sidecar(self, tmp_path):
        raw_cfg = write_cfg(
            tmp_path,
            problem="navier-stokes",
            sensors={"kind": "variable-random", "base_grid": [5, 5]},
            data={"n_train": 3, "n_val": 1, "n_test": 2, "resolution": 16,
                  "grf_cutoff": 4, "ns_t_final": 0.5, "test_grid": [5, 5]},
            model={"d_enc": 8, "heads": 2, "p": 6, "head_out": 4,
                   "encoder_hidden": [], "head_hidden": [8],
                   "combiner_hidden": [8], "trunk_hidden": [8]},
        )
        assert cli.main(["gen-data", "--config", str(raw_cfg)]) == 0
        run = tmp_path / "run"
        meta = D.load_meta(run)
        assert meta.normalization["input"] != [0.0, 1.0]
        test = D.load_split(run, "test", meta)
        fields = D.load_fields(run)
        vals = D.sensor_values_from_field("navier-stokes", fields[0],
                                          test[0].sensor_coords)
        np.testing.assert_allclose(vals, test[0].sensor_values, rtol=1e-10)
        assert cli.main(["train", "--config", str(raw_cfg)]) == 0
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"),
                         "--data", str(run), "--sensors", "missing"]) == 0
