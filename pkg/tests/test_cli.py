import json
import subprocess
import sys

import numpy as np
import pytest

from oracles import pairwise_auroc
from repscore.cli import main
from repscore.losses import LossConfig
from repscore.metrics import batch_quality_report
from repscore.network import EncoderParams, Layer, load_params, save_params
from repscore.repstore import LabelSet, RepresentationMatrix, save_labels, save_matrix
from repscore.trainer import TrainOptions, generate_dataset, train_encoder

TINY = {"dataset": {"k_classes": 3, "n_per_class": 10, "r": 16},
        "train": {"steps": 20, "batch_size": 8, "hidden": [8], "rep_dim": 6, "proj_dim": 4}}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_all(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def report_and_labels(tmp_path, scores_rows, correct):
    save_matrix(RepresentationMatrix(scores_rows), tmp_path / "reps.csv")
    batch_quality_report(RepresentationMatrix(scores_rows)).to_csv(tmp_path / "report.csv")
    y = np.zeros(len(correct), dtype=int)
    save_labels(LabelSet(y, predicted_labels=np.where(correct, 0, 1)), tmp_path / "labels.csv")
    return tmp_path / "report.csv", tmp_path / "labels.csv"


class TestMetrics:
    def test_fixture(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("0,0,3\n1,2,4\n")
        code, out, _ = run(["metrics", tmp_path / "m.csv", "--out", tmp_path / "r.csv"], capsys)
        assert code == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 4 and lines[2].startswith("0,1,")
        assert json.loads(out)["rows"] == 2 and out.count("\n") == 1
        q = float(lines[2].split(",")[6])
        assert q == pytest.approx(np.sqrt(2) / 3, rel=1e-15)

    def test_empty_file(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("")
        code, _, err = run(["metrics", tmp_path / "m.csv", "--out", tmp_path / "r.csv"], capsys)
        assert code == 2 and "error" in err
        assert (tmp_path / "r.csv.manifest.json").exists()

    def test_non_finite_is_invariant_violation(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("1,inf\n")
        assert run(["metrics", tmp_path / "m.csv", "--out", tmp_path / "r.csv"], capsys)[0] == 3

    def test_deterministic(self, tmp_path, capsys):
        save_matrix(RepresentationMatrix(np.random.default_rng(0).random((20, 8))), tmp_path / "m.repb")
        for name in ("a.csv", "b.csv"):
            assert run(["metrics", tmp_path / "m.repb", "--out", tmp_path / name], capsys)[0] == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestCurves:
    def test_perfect_separation(self, tmp_path, capsys):
        correct = np.array([True] * 5 + [False] * 5)
        rows = np.where(correct[:, None], [0.0, 0.0, 5.0], [1.0, 1.5, 2.0])
        rows = rows + np.linspace(0, 1e-3, 10)[:, None] * [1, 0, 0]
        report, labels = report_and_labels(tmp_path, rows, correct)
        code, out, _ = run(["curves", report, labels, "--metric", "q_score", "--out", tmp_path / "c"], capsys)
        assert code == 0
        auc = json.loads((tmp_path / "c" / "auc.json").read_text())
        assert auc["metrics"]["q_score"]["auroc"] == 1.0
        assert (tmp_path / "c" / "roc.svg").read_text().startswith("<svg")

    def test_random_matches_pairwise(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        rows = rng.random((200, 8))
        correct = rng.random(200) < 0.6
        report, labels = report_and_labels(tmp_path, rows, correct)
        assert run(["curves", report, labels, "--out", tmp_path / "c"], capsys)[0] == 0
        auc = json.loads((tmp_path / "c" / "auc.json").read_text())["metrics"]
        q = batch_quality_report(rows).q_score
        assert abs(auc["q_score"]["auroc"] - pairwise_auroc(q, correct)) <= 1e-9
        assert abs(auc["l1_norm"]["auroc"] - pairwise_auroc(-rows.sum(axis=1), correct)) <= 1e-9
        assert len(auc) == 6

    def test_missing_labels(self, tmp_path, capsys):
        report, _ = report_and_labels(tmp_path, np.random.default_rng(2).random((4, 3)), np.array([1, 0, 1, 0], bool))
        assert run(["curves", report, tmp_path / "nope.csv", "--out", tmp_path / "c"], capsys)[0] == 2

    def test_one_class(self, tmp_path, capsys):
        report, labels = report_and_labels(tmp_path, np.random.default_rng(3).random((4, 3)), np.ones(4, bool))
        assert run(["curves", report, labels, "--out", tmp_path / "c"], capsys)[0] == 4


class TestTrain:
    def test_zero_steps_is_init(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {**TINY, "train": {**TINY["train"], "steps": 0}})
        assert run(["train", "--config", cfg, "--seed", 5, "--out", tmp_path / "o"], capsys)[0] == 0
        ds = generate_dataset(k_classes=3, n_per_class=10, r=16, seed=5)
        init, _ = train_encoder(ds, LossConfig(), TrainOptions(steps=0, batch_size=8, hidden=(8,),
                                                               rep_dim=6, proj_dim=4, seed=5))
        assert load_params(tmp_path / "o" / "params").equals(init)

    def test_same_seed_bitwise(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", TINY)
        for d in ("a", "b"):
            assert run(["train", "--config", cfg, "--out", tmp_path / d], capsys)[0] == 0
        a, b = read_all(tmp_path / "a"), read_all(tmp_path / "b")
        assert a.keys() == b.keys()
        for k in a:
            if k != "manifest.json":
                assert a[k] == b[k], k

    def test_manifest(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", TINY)
        run(["train", "--config", cfg, "--seed", 3, "--no-regularized", "--out", tmp_path / "o"], capsys)
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["seed"] == 3 and man["command"] == "train"
        assert man["config"]["loss"]["lambda1"] == 0.0
        assert str(cfg) in man["inputs"] and len(man["inputs"][str(cfg)]) == 64
        assert any(p.endswith("history.csv") for p in man["outputs"])

    def test_replay_bitwise(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", TINY)
        run(["train", "--config", cfg, "--out", tmp_path / "o"], capsys)
        before = read_all(tmp_path / "o")
        (tmp_path / "o" / "history.csv").write_text("clobbered")
        assert run(["replay", tmp_path / "o" / "manifest.json"], capsys)[0] == 0
        assert read_all(tmp_path / "o") == before

    def test_non_finite_exit(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {**TINY, "train": {**TINY["train"], "lr": 1e200}})
        code, _, err = run(["train", "--config", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 5 and "step:" in err

    def test_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("{not json")
        assert run(["train", "--config", tmp_path / "c.json", "--out", tmp_path / "o"], capsys)[0] == 2
        write_json(tmp_path / "d.json", {"trian": {}})
        assert run(["train", "--config", tmp_path / "d.json", "--out", tmp_path / "o"], capsys)[0] == 2

    @pytest.mark.slow
    def test_default_config_loss_falls(self, tmp_path, capsys):
        code, out, _ = run(["train", "--no-regularized", "--out", tmp_path / "o"], capsys)
        summary = json.loads(out)
        assert code == 0 and summary["steps"] == 2000
        assert summary["final_contrastive"] < summary["initial_contrastive"]


class TestCompare:
    def test_null_comparison(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {**TINY, "loss": {"lambda1": 0.0, "lambda2": 0.0}})
        code, out, _ = run(["compare", "--config-base", cfg, "--config-reg", cfg, "--out", tmp_path / "o"], capsys)
        assert code == 0
        comp = json.loads((tmp_path / "o" / "comparison.json").read_text())
        assert comp["baseline"] == comp["regularized"]
        assert "q_score_auprc" in comp["baseline"]
        for name in ("class_profiles_correct.csv", "sorted_feature_profile.csv", "sparsity.csv"):
            assert (tmp_path / "o" / "baseline" / name).exists()
        assert set(json.loads(out)) >= {"baseline_auprc", "regularized_auprc"}

    def test_arm_outputs_feed_curves(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {**TINY, "dataset": {**TINY["dataset"], "n_per_class": 20}})
        assert run(["compare", "--config-base", cfg, "--config-reg", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
        arm = tmp_path / "o" / "baseline"
        comp = json.loads((tmp_path / "o" / "comparison.json").read_text())["baseline"]
        code, out, _ = run(["curves", arm / "test_quality_report.csv", arm / "test_labels.csv",
                            "--metric", "q_score", "--out", tmp_path / "c"], capsys)
        assert code == 0
        assert json.loads(out)["q_score"] == pytest.approx(comp["q_score_auroc"], abs=1e-12)
        auc = json.loads((tmp_path / "c" / "auc.json").read_text())
        assert auc["n_samples"] == comp["n_test"] and auc["prevalence"] == pytest.approx(comp["prevalence"])

    @pytest.mark.slow
    def test_default_toy_run(self, tmp_path, capsys):
        code, out, _ = run(["compare", "--out", tmp_path / "o"], capsys)
        summary = json.loads(out)
        assert code == 0
        config = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
        assert config["base"]["loss"]["lambda1"] == config["base"]["loss"]["lambda2"] == 0.0
        assert config["reg"]["loss"]["lambda1"] == config["reg"]["loss"]["lambda2"] == 0.1
        assert summary["regularized_sparsity"] > summary["baseline_sparsity"]


def linear_fixture(tmp_path):
    W = np.random.default_rng(4).normal(size=(3, 16))
    W[2] = np.abs(W[2])
    params = EncoderParams([Layer(W, np.zeros(3))], [Layer(np.eye(3), np.zeros(3))])
    save_params(params, tmp_path / "p")
    save_matrix(RepresentationMatrix(np.ones((2, 16))), tmp_path / "x.repb")
    return W


class TestSaliency:
    def test_feature_out_of_range(self, tmp_path, capsys):
        linear_fixture(tmp_path)
        code, _, _ = run(["saliency", "--params", tmp_path / "p", "--dataset", tmp_path / "x.repb",
                          "--sample", 0, "--feature", 3, "--out", tmp_path / "s"], capsys)
        assert code == 3

    def test_linear_map(self, tmp_path, capsys):
        W = linear_fixture(tmp_path)
        code, _, _ = run(["saliency", "--params", tmp_path / "p", "--dataset", tmp_path / "x.repb",
                          "--sample", 1, "--feature", 2, "--out", tmp_path / "s"], capsys)
        assert code == 0
        values = np.array([float(v) for v in (tmp_path / "s" / "saliency_s1_f2.csv").read_text().split(",")])
        assert np.array_equal(values, np.abs(W[2]) / np.abs(W[2]).max())
        assert (tmp_path / "s" / "saliency_s1_f2.pgm").exists()

    def test_dominant(self, tmp_path, capsys):
        W = linear_fixture(tmp_path)
        save_labels(LabelSet([0, 0], predicted_labels=[0, 0]), tmp_path / "l.csv")
        code, out, _ = run(["saliency", "--params", tmp_path / "p", "--dataset", tmp_path / "x.repb",
                            "--sample", 0, "--dominant", "--labels", tmp_path / "l.csv", "--out", tmp_path / "s"],
                           capsys)
        assert code == 0
        h = np.maximum(W @ np.ones(16), 0)
        scan = max(range(3), key=lambda k: (abs(h[k]), -k))
        assert json.loads(out)["maps"][0]["feature"] == scan


class TestProcess:
    def test_entry_point_and_threads(self, tmp_path):
        (tmp_path / "m.csv").write_text("0,0,3\n")
        env = {"REPSCORE_THREADS": "1", "PATH": "/usr/bin:/bin"}
        res = subprocess.run([sys.executable, "-m", "repscore.cli", "metrics", str(tmp_path / "m.csv"),
                              "--out", str(tmp_path / "r.csv")], capture_output=True, text=True, env=env)
        assert res.returncode == 0
        assert json.loads(res.stdout)["rows"] == 1
        assert json.loads((tmp_path / "r.csv.manifest.json").read_text())["threads"] == "1"

    def test_usage_error(self, capsys):
        assert main(["metrics"]) == 2
