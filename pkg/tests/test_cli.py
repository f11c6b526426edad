"""Command-line pipeline: exit codes, reproducibility, emitted artifacts."""

import hashlib
import json

import pytest

from ganfolio.cli import main
from ganfolio.config import RunConfig, load_config_file, merge_config, save_config_file
from ganfolio.errors import ConfigError

FAST_TRAIN = ["--epochs", "2", "--g-hidden", "16", "--d-hidden", "24,24",
              "--noise-dim", "8", "--sample-stride", "2"]


def run(args):
    return main(args)


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def pipeline_dir(tmp_path):
    synth_dir = tmp_path / "synth"
    rc = run(["synth", "--seed", "7", "--n-signal", "3", "--n-noise", "3",
              "--n-days", "120", "--out-dir", str(synth_dir)])
    assert rc == 0
    return tmp_path


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(seed=11, out_dir="x", th_p=0.2, thr_grid="0,-10")
        path = tmp_path / "run.config"
        save_config_file(path, cfg)
        values = load_config_file(path)
        assert merge_config(values, {}) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.config"
        path.write_text("not_a_key = 5\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config_file(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "run.config"
        path.write_text("# comment\n\nseed = 3\n")
        assert load_config_file(path) == {"seed": 3}

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.config"
        save_config_file(path, RunConfig(seed=1, n_days=99))
        out = tmp_path / "o"
        rc = run(["synth", "--config", str(path), "--seed", "2",
                  "--n-signal", "1", "--n-noise", "1", "--n-days", "60",
                  "--out-dir", str(out)])
        assert rc == 0
        echoed = load_config_file(out / "synth.config")
        assert echoed["seed"] == 2
        assert echoed["n_days"] == 60


class TestSynth:
    def test_writes_prices_manifest_and_echo(self, tmp_path):
        out = tmp_path / "s"
        rc = run(["synth", "--seed", "3", "--n-signal", "2", "--n-noise", "2",
                  "--n-days", "80", "--out-dir", str(out)])
        assert rc == 0
        assert (out / "prices.csv").exists()
        assert (out / "manifest.csv").exists()
        assert (out / "synth.config").exists()

    def test_same_flags_identical_files(self, tmp_path):
        args = ["synth", "--seed", "3", "--n-signal", "2", "--n-noise", "2",
                "--n-days", "80"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out-dir", str(a)]) == 0
        assert run(args + ["--out-dir", str(b)]) == 0
        assert file_hash(a / "prices.csv") == file_hash(b / "prices.csv")
        assert file_hash(a / "manifest.csv") == file_hash(b / "manifest.csv")

    def test_missing_seed_exits_2(self, tmp_path, capsys):
        rc = run(["synth", "--n-signal", "2", "--n-noise", "2",
                  "--n-days", "80", "--out-dir", str(tmp_path / "x")])
        assert rc == 2
        assert "seed" in capsys.readouterr().err

    def test_missing_required_flag_usage_error(self):
        with pytest.raises(SystemExit) as info:
            run(["synth", "--bogus-flag", "1"])
        assert info.value.code == 2


class TestDatasetCommand:
    def test_builds_dataset_csv(self, pipeline_dir):
        out = pipeline_dir / "ds"
        rc = run(["dataset", "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--out-dir", str(out), "--sample-stride", "4"])
        assert rc == 0
        lines = (out / "dataset.csv").read_text().strip().splitlines()
        assert lines[0].startswith("asset_id,label_time,x_0")
        assert len(lines) > 1

    def test_corrupt_prices_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("date,asset_id,close\n0,A,not_a_number\n")
        rc = run(["dataset", "--prices", str(bad), "--out-dir", str(tmp_path / "o")])
        assert rc == 2
        assert "line 2" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_checkpoint_trace_and_figure(self, pipeline_dir):
        out = pipeline_dir / "t"
        rc = run(["train", "--seed", "3",
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--out-dir", str(out), *FAST_TRAIN])
        assert rc == 0
        assert (out / "checkpoint.json").exists()
        trace = (out / "loss_trace.csv").read_text().strip().splitlines()
        assert trace[0] == "epoch,d_loss,g_loss"
        assert len(trace) == 3
        assert (out / "loss_trace.png").exists()

    def test_no_plots_flag(self, pipeline_dir):
        out = pipeline_dir / "t2"
        rc = run(["train", "--seed", "3", "--no-plots",
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--out-dir", str(out), *FAST_TRAIN])
        assert rc == 0
        assert not (out / "loss_trace.png").exists()

    def test_zero_epochs_checkpoint_of_fresh_nets(self, pipeline_dir):
        out = pipeline_dir / "t0"
        rc = run(["train", "--seed", "3", "--epochs", "0",
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--out-dir", str(out), "--g-hidden", "16",
                  "--d-hidden", "24,24", "--noise-dim", "8"])
        assert rc == 0
        payload = json.loads((out / "checkpoint.json").read_text())
        assert payload["epoch"] == 0

    def test_divergence_exits_3(self, pipeline_dir, capsys):
        import numpy as np
        out = pipeline_dir / "t3"
        with np.errstate(invalid="ignore", over="ignore"):
            rc = run(["train", "--seed", "3", "--lr-d", "1e200",
                      "--prices", str(pipeline_dir / "synth/prices.csv"),
                      "--out-dir", str(out), *FAST_TRAIN])
        assert rc == 3
        assert "diverged" in capsys.readouterr().err


class TestPredictCommand:
    def _train(self, pipeline_dir):
        out = pipeline_dir / "model"
        assert run(["train", "--seed", "3",
                    "--prices", str(pipeline_dir / "synth/prices.csv"),
                    "--out-dir", str(out), *FAST_TRAIN]) == 0
        return out / "checkpoint.json"

    def test_prediction_dump(self, pipeline_dir):
        ck = self._train(pipeline_dir)
        out = pipeline_dir / "p"
        rc = run(["predict", "--checkpoint", str(ck),
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--predict-time", "100", "--i-samples", "11",
                  "--out-dir", str(out), "--seed", "4"])
        assert rc == 0
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "asset_id,timestamp,p_minus,p_zero,p_plus,c_m,score,risk_U,I"
        assert len(lines) == 7  # six assets

    def test_warns_on_non_reference_sample_count(self, pipeline_dir, capsys):
        ck = self._train(pipeline_dir)
        rc = run(["predict", "--checkpoint", str(ck),
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--predict-time", "100", "--i-samples", "11",
                  "--th-r", "-30", "--seed", "4",
                  "--out-dir", str(pipeline_dir / "pw")])
        assert rc == 0
        assert "calibrated at I=101" in capsys.readouterr().err

    def test_missing_checkpoint_exits_2(self, pipeline_dir):
        rc = run(["predict", "--checkpoint", str(pipeline_dir / "nope.json"),
                  "--prices", str(pipeline_dir / "synth/prices.csv"),
                  "--predict-time", "100",
                  "--out-dir", str(pipeline_dir / "px")])
        assert rc == 2


class TestBacktestCommand:
    def _train(self, pipeline_dir):
        out = pipeline_dir / "model"
        assert run(["train", "--seed", "3",
                    "--prices", str(pipeline_dir / "synth/prices.csv"),
                    "--out-dir", str(out), *FAST_TRAIN]) == 0
        return out / "checkpoint.json"

    def _backtest_args(self, pipeline_dir, ck, out, extra=()):
        return ["backtest", "--checkpoint", str(ck),
                "--prices", str(pipeline_dir / "synth/prices.csv"),
                "--out-dir", str(out), "--train-end", "80",
                "--eval-start", "90", "--eval-end", "110",
                "--rebalance-stride", "5", "--i-samples", "11",
                "--th-p", "0.34", "--seed", "5", *extra]

    def test_report_bundle_with_grid_and_figure(self, pipeline_dir):
        ck = self._train(pipeline_dir)
        out = pipeline_dir / "bt"
        rc = run(self._backtest_args(pipeline_dir, ck, out,
                                     ["--thr-grid", "0,-10,-20",
                                      "--thp-grid", "0.34,0.5"]))
        assert rc == 0
        for name in ("metrics.json", "equity.csv", "weights.csv",
                     "predictions.csv", "comparison.csv", "equity.png",
                     "backtest.config"):
            assert (out / name).exists(), name
        header = (out / "comparison.csv").read_text().splitlines()[0]
        assert header == "th_p,metric,th_r=0,th_r=-10,th_r=-20"

    def test_single_report_without_grid(self, pipeline_dir):
        ck = self._train(pipeline_dir)
        out = pipeline_dir / "bt1"
        rc = run(self._backtest_args(pipeline_dir, ck, out))
        assert rc == 0
        assert not (out / "comparison.csv").exists()
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["config"]["th_p"] == 0.34

    def test_missing_checkpoint_exits_2(self, pipeline_dir):
        out = pipeline_dir / "bt2"
        rc = run(self._backtest_args(pipeline_dir, pipeline_dir / "nope.json", out))
        assert rc == 2

    def test_rerun_from_echoed_config_is_byte_identical(self, pipeline_dir):
        ck = self._train(pipeline_dir)
        out1 = pipeline_dir / "btA"
        assert run(self._backtest_args(pipeline_dir, ck, out1,
                                       ["--thr-grid", "0,-10"])) == 0
        # rerun purely from the echoed config, into a second directory
        out2 = pipeline_dir / "btB"
        rc = run(["backtest", "--config", str(out1 / "backtest.config"),
                  "--out-dir", str(out2)])
        assert rc == 0
        for name in ("metrics.json", "equity.csv", "weights.csv",
                     "predictions.csv", "comparison.csv", "equity.png"):
            assert file_hash(out1 / name) == file_hash(out2 / name), name
