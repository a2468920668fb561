import json
import re

import numpy as np
import pytest
import torch

from gamformer import training
from gamformer.bench.cli import main
from gamformer.shapes import load_shape_model


@pytest.fixture(scope="module")
def linear(tmp_path_factory):
    root = tmp_path_factory.mktemp("linear")
    assert main(["gen-data", "--source", "linear3", "--seed", "0", "--out", str(root)]) == 0
    return root


class TestPipeline:
    def test_fit_predict_matches_eval_scores(self, linear, tmp_path):
        model = tmp_path / "m.gams"
        assert main(["fit", "--data", str(linear / "train.csv"), "--out", str(model)]) == 0
        assert main(["predict", "--model", str(model), "--data", str(linear / "test.csv"), "--out", str(tmp_path / "p.csv")]) == 0
        assert main(["eval", "--data", str(linear / "train.csv"), "--test", str(linear / "test.csv"), "--out", str(tmp_path / "e.csv")]) == 0
        assert (tmp_path / "p.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()

    def test_plot_has_one_panel_per_feature(self, linear, tmp_path):
        model = tmp_path / "m.gams"
        main(["fit", "--data", str(linear / "train.csv"), "--out", str(model)])
        svg = tmp_path / "f.svg"
        assert main(["plot", "--model", str(model), "--data", str(linear / "train.csv"), "--out", str(svg)]) == 0
        assert svg.read_text().count('<g class="panel"') == 3

    def test_eval_report(self, linear, tmp_path):
        out = tmp_path / "r.ndjson"
        assert main(["eval", "--data", str(linear / "train.csv"), "--k", "2", "--out", str(out)]) == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 3 and rows[-1]["summary"]
        assert all(r["auc"] >= 0.95 for r in rows[:2])

    def test_shapes_csv_and_ebm(self, linear, tmp_path):
        out = tmp_path / "e.gams"
        assert main(["ebm-fit", "--data", str(linear / "train.csv"), "--rounds", "20", "--out", str(out), "--shapes-csv", str(tmp_path / "s.csv")]) == 0
        assert load_shape_model(out).provenance == "ebm-lite"
        assert (tmp_path / "s.csv").read_text().startswith("# provenance=ebm-lite")

    def test_pairs_log_pass_count(self, tmp_path, caplog):
        main(["gen-data", "--source", "xor", "--out", str(tmp_path)])
        with caplog.at_level("INFO"):
            code = main(["fit", "--data", str(tmp_path / "train.csv"), "--pairs", "auto", "--out", str(tmp_path / "x.gams")])
        assert code == 0
        line = next(r.message for r in caplog.records if "shape-estimation passes" in r.message)
        passes, grid = re.search(r"passes: (\d+) \(grid (\[[^\]]*\])", line).groups()
        assert int(passes) == len(json.loads(grid)) + 1 == 3

    def test_deterministic_under_seed(self, tmp_path):
        for name in ("a", "b"):
            main(["gen-data", "--source", "centroids", "--seed", "3", "--out", str(tmp_path / name)])
        assert (tmp_path / "a" / "train.csv").read_bytes() == (tmp_path / "b" / "train.csv").read_bytes()

    def test_prior_dump(self, tmp_path):
        assert main(["gen-data", "--source", "prior", "--count", "3", "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.gamt"))) == 3

    def test_config_file_sets_defaults(self, linear, tmp_path):
        cfg = tmp_path / "fit.cfg"
        cfg.write_text("pairs=1\n")
        model = tmp_path / "m.gams"
        assert main(["fit", "--config", str(cfg), "--data", str(linear / "train.csv"), "--out", str(model)]) == 0
        assert len(load_shape_model(model).pairs) == 1


class TestTrain:
    def test_short_run(self, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("steps=3\nwarmup_steps=1\nbatch_size=2\nmodel.d_model=16\nmodel.n_heads=2\nprior.samples_per_task=32\n")
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "run"), "--log", str(tmp_path / "log")])
        assert code == 0
        assert (tmp_path / "run" / "final.gamf").exists()
        assert len((tmp_path / "log").read_text().splitlines()) == 3

    def test_divergence_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setattr(training, "task_loss", lambda net, task: torch.tensor(float("nan"), requires_grad=True))
        code = main(["train", "--set", "steps=3", "--set", "warmup_steps=1", "--out", str(tmp_path)])
        assert code == 3
        assert (tmp_path / "diverged.gamf").exists()


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["fit", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_command(self):
        assert main([]) == 1

    def test_bad_pairs_value(self, linear):
        assert main(["fit", "--data", str(linear / "train.csv"), "--pairs", "many", "--out", "x"]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["fit", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m")]) == 2

    def test_bad_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,y\n1,0\noops,1\n")
        assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "m")]) == 2

    def test_missing_out(self, linear):
        assert main(["fit", "--data", str(linear / "train.csv")]) == 1

    def test_help(self):
        assert main(["--help"]) == 0
