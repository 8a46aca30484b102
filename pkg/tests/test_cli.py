import json

import numpy as np
import pytest

from qarsum.cli import consistency, evaluate, main
from qarsum.data import GroundTruth, iter_jsonl, load_annotations, load_ground_truth
from qarsum.metrics import REPORT_COLUMNS
from qarsum.relevance import EmbeddingModel

SMALL = ["--n-videos", "6", "--frames-per-video", "12", "--triplets-per-video", "20", "--seed", "3"]


def records(path):
    return [rec for _, rec in iter_jsonl(path)]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-synthetic", "--out", str(out), *SMALL]) == 0
    return out


class TestGenSynthetic:
    def test_files_and_determinism(self, corpus_dir, tmp_path):
        assert main(["gen-synthetic", "--out", str(tmp_path), *SMALL]) == 0
        for name in ("triplets.jsonl", "videos.jsonl", "annotations.jsonl", "ground_truth.jsonl", "problems.jsonl", "planted_model.txt"):
            assert (tmp_path / name).read_bytes() == (corpus_dir / name).read_bytes(), name

    def test_seed_changes_output(self, corpus_dir, tmp_path):
        args = [a if a != "3" else "4" for a in SMALL]
        assert main(["gen-synthetic", "--out", str(tmp_path), *args]) == 0
        assert (tmp_path / "videos.jsonl").read_bytes() != (corpus_dir / "videos.jsonl").read_bytes()

    def test_header_records_settings(self, corpus_dir):
        first = json.loads((corpus_dir / "videos.jsonl").read_text().splitlines()[0])
        assert first["_header"]["config"]["rng_seed"] == 3
        assert first["_header"]["config"]["n_videos"] == 6

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_videos": 2, "frames_per_video": 10, "noise_sigma": 0.3}))
        assert main(["gen-synthetic", "--config", str(cfg), "--n-videos", "3", "--out", str(tmp_path / "o")]) == 0
        header = json.loads((tmp_path / "o" / "config.json").read_text())
        assert header["config"]["n_videos"] == 3
        assert header["config"]["noise_sigma"] == 0.3
        assert len(records(tmp_path / "o" / "videos.jsonl")) == 3

    def test_invalid_field(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_vidoes": 2}))
        assert main(["gen-synthetic", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
        err = capsys.readouterr().err
        assert "n_vidoes" in err and err.count("\n") == 1


class TestTrain:
    def test_no_quality_banner(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "m.txt"
        assert main(["train", "--triplets", str(corpus_dir / "triplets.jsonl"), "--out", str(out), "--mode", "noq", "--epochs", "2"]) == 0
        assert "quality=absent" in capsys.readouterr().out
        model = EmbeddingModel.load(out)
        assert not model.weight[:, -1].any()

    def test_modes_differ(self, corpus_dir, tmp_path):
        logs = {}
        for mode in ("expli", "impli"):
            log = tmp_path / f"{mode}.csv"
            argv = ["train", "--triplets", str(corpus_dir / "triplets.jsonl"), "--out", str(tmp_path / f"{mode}.txt"),
                    "--mode", mode, "--epochs", "3", "--loss-log", str(log)]
            assert main(argv) == 0
            lines = log.read_text().splitlines()
            assert lines[0].startswith("# ") and lines[1] == "epoch,loss"
            logs[mode] = lines[2:]
        assert len(logs["expli"]) == 3
        assert logs["expli"] != logs["impli"]

    def test_zero_epochs_returns_init(self, corpus_dir, tmp_path):
        out = tmp_path / "m.txt"
        assert main(["train", "--triplets", str(corpus_dir / "triplets.jsonl"), "--out", str(out), "--epochs", "0", "--seed", "5"]) == 0
        assert EmbeddingModel.load(out) == EmbeddingModel.random(32, 8, 5)

    def test_deterministic(self, corpus_dir, tmp_path):
        argv = ["train", "--triplets", str(corpus_dir / "triplets.jsonl"), "--epochs", "2"]
        assert main(argv + ["--out", str(tmp_path / "a.txt")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b.txt")]) == 0
        assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()

    def test_missing_file(self, tmp_path, capsys):
        assert main(["train", "--triplets", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "m.txt")]) == 1
        assert capsys.readouterr().err.startswith("qarsum: error:")


class TestSummarize:
    def test_mmr_equals_mixture(self, corpus_dir, tmp_path):
        weights = tmp_path / "w.json"
        weights.write_text(json.dumps({"weights": [0.333, 0, 0.667, 0]}))
        problems = str(corpus_dir / "problems.jsonl")
        assert main(["summarize", "--problems", problems, "--mmr", "0.333", "--out", str(tmp_path / "a.jsonl")]) == 0
        assert main(["summarize", "--problems", problems, "--weights", str(weights), "--out", str(tmp_path / "b.jsonl")]) == 0
        a = [r["selected"] for r in records(tmp_path / "a.jsonl")]
        b = [r["selected"] for r in records(tmp_path / "b.jsonl")]
        assert a == b

    def test_budget_too_large(self, corpus_dir, tmp_path, capsys):
        argv = ["summarize", "--problems", str(corpus_dir / "problems.jsonl"), "--k", "13", "--hecate", "--out", str(tmp_path / "s.jsonl")]
        assert main(argv) == 1
        err = capsys.readouterr().err
        assert "v0000" in err and "k=13" in err
        assert not (tmp_path / "s.jsonl").exists()

    def test_model_and_videos(self, corpus_dir, tmp_path):
        argv = ["summarize", "--model", str(corpus_dir / "planted_model.txt"), "--videos", str(corpus_dir / "videos.jsonl"),
                "--k", "3", "--hecate", "--out"]
        assert main(argv + [str(tmp_path / "a.jsonl")]) == 0
        assert main(argv + [str(tmp_path / "b.jsonl")]) == 0
        recs = records(tmp_path / "a.jsonl")
        assert len(recs) == 6 and all(len(r["selected"]) == 3 for r in recs)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_exactly_one_method(self, corpus_dir, tmp_path):
        assert main(["summarize", "--problems", str(corpus_dir / "problems.jsonl"), "--out", str(tmp_path / "s.jsonl")]) == 1


class TestLearnWeights:
    def test_percentage_line(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "w.json"
        argv = ["learn-weights", "--problems", str(corpus_dir / "problems.jsonl"), "--ground-truth", str(corpus_dir / "ground_truth.jsonl"),
                "--epochs", "2", "--out", str(out)]
        assert main(argv) == 0
        line = capsys.readouterr().out.strip()
        names = ["similarity", "quality", "diversity", "representativeness"]
        assert [part.split(" (")[0] for part in line.split("  ")] == names
        assert all(part.endswith("%)") for part in line.split("  "))
        weights = json.loads(out.read_text())["weights"]
        assert len(weights) == 4 and min(weights) >= 0
        assert (tmp_path / "w.json.f1.csv").read_text().splitlines()[1] == "epoch,train_f1"


class TestEvaluate:
    def test_columns_and_agreement(self, corpus_dir, tmp_path):
        summ = tmp_path / "s.jsonl"
        assert main(["summarize", "--problems", str(corpus_dir / "problems.jsonl"), "--mmr", "0.5", "--out", str(summ)]) == 0
        common = ["evaluate", "--ground-truth", str(corpus_dir / "ground_truth.jsonl"), "--summaries", str(summ),
                  "--model", str(corpus_dir / "planted_model.txt"), "--videos", str(corpus_dir / "videos.jsonl")]
        assert main(common + ["--format", "json", "--out", str(tmp_path / "r.json")]) == 0
        assert main(common + ["--format", "table", "--out", str(tmp_path / "r.txt")]) == 0
        report = json.loads((tmp_path / "r.json").read_text())
        table = (tmp_path / "r.txt").read_text()
        assert "hit1_vg" in report["aggregate"] and "hit1_vg_or_g" in report["aggregate"]
        assert "HIT@1 VG " in table and "HIT@1 VG-or-G" in table
        for value in report["aggregate"].values():
            assert repr(float(value)) in table

    def test_perfect_summaries(self):
        gt = GroundTruth([1, 1, 0, 1], [0, 1, 1, 2], video_id="a")
        rep = evaluate([gt], summaries={"a": {"selected": [0, 1, 3]}}).to_dict()
        assert rep["aggregate"]["f1"] == 1.0 == rep["aggregate"]["precision"] == rep["aggregate"]["cluster_recall"]

    def test_ranking_metrics(self):
        gt = GroundTruth([1, 0, 1], [0, 0, 1], scores=[0.9, 0.1, 0.6], labels=["VeryGood", "NotGood", "Good"], video_id="a")
        rep = evaluate([gt], rankings={"a": {"scores": [3.0, 1.0, 2.0]}}).to_dict()["aggregate"]
        assert rep["hit1_vg"] == 1.0 and rep["hit1_vg_or_g"] == 1.0
        assert rep["map"] == 1.0 and rep["spearman"] == pytest.approx(1.0)

    def test_known_columns(self):
        assert {"hit1_vg", "hit1_vg_or_g", "map", "f1"} <= {key for key, _ in REPORT_COLUMNS}


class TestConsistency:
    def test_noiseless(self, tmp_path):
        out = tmp_path / "c"
        assert main(["gen-synthetic", "--out", str(out), "--noise-sigma", "0", *SMALL]) == 0
        report = consistency(load_annotations(out / "annotations.jsonl")).to_dict()
        for row in report["per_video"].values():
            assert row["n_splits"] == 10
            assert row["spearman"] == pytest.approx(1.0)
            assert row["nmi_consistency"] == pytest.approx(1.0)

    def test_cli_json(self, corpus_dir, tmp_path):
        out = tmp_path / "c.json"
        assert main(["consistency", "--annotations", str(corpus_dir / "annotations.jsonl"), "--format", "json", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert len(report["per_video"]) == 6
        assert 0 < report["aggregate"]["nmi_consistency"] <= 1

    def test_ground_truth_loads(self, corpus_dir):
        truths = load_ground_truth(corpus_dir / "ground_truth.jsonl")
        assert all(t.has_positive for t in truths)
        assert np.mean([t.binary_relevance.mean() for t in truths]) < 1
