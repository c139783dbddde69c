import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerated_auprc, pairwise_auroc
from repscore.errors import MissingCorrectness, NoPositives, OneClassOnly
from repscore.evaluation import (
    METRIC_ORIENTATION,
    benchmark_to_csv,
    benchmark_to_json,
    class_profiles,
    curves_svg,
    exact_sparsity,
    metric_benchmark,
    pr_curve,
    profiles_to_matrices,
    roc_curve,
    sorted_feature_profile,
)
from repscore.metrics import METRIC_NAMES, batch_quality_report
from repscore.repstore import LabelSet, RepresentationMatrix


def random_case(rng, n, ties=True):
    s = rng.normal(size=n)
    if ties:
        s = np.round(s, 1)
    c = rng.random(n) < rng.uniform(0.2, 0.8)
    c[0], c[-1] = True, False
    return s, c


class TestRoc:
    def test_perfect(self):
        r = roc_curve([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
        assert r.area == 1.0

    def test_all_equal(self):
        r = roc_curve([0.3] * 6, [True, False, True, False, False, True])
        assert r.area == 0.5
        assert r.points.tolist() == [[0, 0], [1, 1]]

    def test_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        s, c = random_case(rng, 200)
        assert abs(roc_curve(s, c).area - pairwise_auroc(s, c)) <= 1e-9

    def test_curve_shape(self):
        s, c = random_case(np.random.default_rng(1), 100)
        pts = roc_curve(s, c).points
        assert pts[0].tolist() == [0, 0] and pts[-1].tolist() == [1, 1]
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all((pts >= 0) & (pts <= 1))

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            roc_curve([1, 2, 3], [True, True, True])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_transform_invariance(self, seed):
        s, c = random_case(np.random.default_rng(seed), 60)
        t = np.exp(3 * s) + 7
        assert roc_curve(t, c).area == roc_curve(s, c).area
        assert pr_curve(t, c).area == pr_curve(s, c).area

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_label_flip(self, seed):
        s, c = random_case(np.random.default_rng(seed), 50, ties=False)
        assert roc_curve(s, ~c).area == pytest.approx(1 - roc_curve(s, c).area, abs=1e-12)


class TestPr:
    def test_perfect(self):
        assert pr_curve([0.9, 0.8, 0.2, 0.1], [True, True, False, False]).area == 1.0

    def test_all_equal_prevalence(self):
        assert pr_curve([1.0] * 4, [True, False, True, False]).area == 0.5

    def test_enumeration_oracle(self):
        s, c = random_case(np.random.default_rng(2), 200)
        assert abs(pr_curve(s, c).area - enumerated_auprc(list(s), list(c))) <= 1e-9

    def test_recall_non_decreasing(self):
        s, c = random_case(np.random.default_rng(3), 120)
        pts = pr_curve(s, c).points
        assert np.all(np.diff(pts[:, 0]) >= 0) and np.all((pts >= 0) & (pts <= 1))

    def test_no_positives(self):
        with pytest.raises(NoPositives):
            pr_curve([1, 2], [False, False])

    def test_csv(self, tmp_path):
        pr_curve([0.9, 0.1], [True, False]).to_csv(tmp_path / "pr.csv")
        assert (tmp_path / "pr.csv").read_text().splitlines()[0] == "recall,precision"


class TestBenchmark:
    def test_orientation_table(self):
        assert set(METRIC_ORIENTATION) == set(METRIC_NAMES)

    def test_perfect_q_predictor(self):
        rng = np.random.default_rng(4)
        correct = rng.random(40) < 0.5
        correct[:2] = [True, False]
        # a peaked row for correct samples, a flat-ish row for incorrect ones
        rows = np.where(correct[:, None], [0.0, 0.0, 0.0, 4.0], [1.0, 1.2, 0.9, 1.1])
        rows = rows + 1e-3 * rng.random(rows.shape)
        bench = {r.metric: r for r in metric_benchmark(batch_quality_report(rows), correct)}
        assert bench["q_score"].auroc == 1.0
        assert bench["q_score"].auprc == 1.0
        assert bench["q_score"].prevalence == correct.mean()

    def test_flagged_rows_dropped(self):
        data = np.array([[0, 0, 3.0], [1, 1, 1.0], [0, 1, 2.0], [5, 0, 0.5]])
        correct = np.array([True, True, False, False])
        rows = metric_benchmark(batch_quality_report(data), correct)
        assert all(r.n_samples == 3 for r in rows)

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            metric_benchmark(batch_quality_report(np.eye(3)), [True, True, True])

    def test_exports(self, tmp_path):
        rng = np.random.default_rng(5)
        rows = metric_benchmark(batch_quality_report(rng.random((30, 6))), rng.random(30) < 0.5)
        benchmark_to_csv(rows, tmp_path / "b.csv")
        assert len((tmp_path / "b.csv").read_text().splitlines()) == 7
        assert "q_score" in benchmark_to_json(rows, tmp_path / "b.json")

    def test_svg(self, tmp_path):
        s, c = random_case(np.random.default_rng(6), 30)
        svg = curves_svg({"q": roc_curve(s, c)}, tmp_path / "c.svg", title="t")
        assert svg.startswith("<svg") and "polyline" in svg


class TestProfiles:
    def test_empty_incorrect(self):
        labels = LabelSet([0, 0], predicted_labels=[0, 0])
        (p,) = class_profiles(RepresentationMatrix([[1.0, 2.0], [3.0, 4.0]]), labels)
        assert p.incorrect_empty and p.accuracy == 1.0
        assert np.array_equal(p.correct_mean, [2.0, 3.0])
        assert np.isnan(profiles_to_matrices([p], "incorrect")).all()

    def test_identical_rows(self):
        data = np.array([[1.0, 0.5], [1.0, 0.5], [2.0, 0.0], [2.0, 0.0]])
        labels = LabelSet([0, 0, 1, 1], predicted_labels=[0, 0, 1, 1])
        for p in class_profiles(RepresentationMatrix(data), labels):
            assert np.array_equal(p.mean, data[2 * p.class_id])

    def test_group_by_oracle(self):
        rng = np.random.default_rng(7)
        y = np.repeat(np.arange(10), 12)
        pred = np.where(rng.random(y.size) < 0.7, y, rng.integers(0, 10, y.size))
        data = rng.normal(size=(y.size, 5))
        profiles = class_profiles(RepresentationMatrix(data), LabelSet(y, predicted_labels=pred))
        accs = [p.accuracy for p in profiles]
        assert accs == sorted(accs, reverse=True)
        for p in profiles:
            for which, sel in (("correct_mean", pred == y), ("incorrect_mean", pred != y)):
                rows = data[(y == p.class_id) & sel]
                got = getattr(p, which)
                if rows.shape[0] == 0:
                    assert got is None
                    continue
                oracle = [sum(rows[:, j]) / rows.shape[0] for j in range(5)]
                np.testing.assert_allclose(got, oracle, rtol=1e-12, atol=1e-12)

    def test_missing_correctness(self):
        with pytest.raises(MissingCorrectness):
            class_profiles(RepresentationMatrix(np.eye(2)), LabelSet([0, 1]))

    def test_sorted_profile(self):
        labels = LabelSet([0, 1], predicted_labels=[0, 1])
        data = np.array([[3.0, 0.0, 5.0], [0.0, 0.0, 0.0]])
        mat, ids, acc = sorted_feature_profile(class_profiles(RepresentationMatrix(data), labels))
        assert mat[0].tolist() == [5, 3, 0] and mat[1].tolist() == [0, 0, 0]

    def test_sorted_rows_non_increasing(self):
        rng = np.random.default_rng(8)
        y = np.repeat(np.arange(4), 5)
        profiles = class_profiles(RepresentationMatrix(rng.normal(size=(20, 9))), LabelSet(y, predicted_labels=y))
        mat, _, _ = sorted_feature_profile(profiles)
        assert np.all(np.diff(np.abs(mat), axis=1) <= 0)


class TestExactSparsity:
    def test_example(self):
        assert exact_sparsity(np.array([[0, 0, 1, 1.0]]), 0.0).tolist() == [0.5]

    def test_tolerance(self):
        assert exact_sparsity(np.array([[1e-9, 0.1]]), 1e-6).tolist() == [0.5]

    def test_count_oracle(self):
        h = np.maximum(np.random.default_rng(9).normal(size=(30, 16)), 0)
        expect = [sum(1 for x in row if x == 0) / 16 for row in h]
        assert exact_sparsity(h).tolist() == expect
