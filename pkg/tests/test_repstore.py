import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from repscore.errors import (
    EmptyMatrix,
    InvariantError,
    IoError,
    MissingCorrectness,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    ZeroNormEmbedding,
)
from repscore.repstore import (
    LabelSet,
    ProjectionMatrix,
    RepresentationMatrix,
    load_labels,
    load_matrix,
    save_labels,
    save_matrix,
)


class TestRepresentationMatrix:
    def test_shape_fields(self):
        m = RepresentationMatrix(np.zeros((3, 2)))
        assert (m.n_samples, m.n_features) == (3, 2)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(NonFiniteValue):
            RepresentationMatrix(np.array([[1.0, bad]]))

    def test_rejects_empty(self):
        with pytest.raises((EmptyMatrix, ShapeMismatch)):
            RepresentationMatrix(np.zeros((0, 3)))

    def test_projection_rejects_zero_row(self):
        with pytest.raises(ZeroNormEmbedding):
            ProjectionMatrix(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestCsv:
    def test_literal_parse(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1.0,2.0\n3.0,4.0")
        assert np.array_equal(load_matrix(p).data, [[1, 2], [3, 4]])

    def test_ragged_is_parse_error(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,4,5\n")
        with pytest.raises(ParseError):
            load_matrix(p)

    def test_header_line_skipped(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("# a comment\n1,2\n")
        assert load_matrix(p).data.shape == (1, 2)

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,nan\n")
        with pytest.raises(NonFiniteValue):
            load_matrix(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        with pytest.raises(EmptyMatrix):
            load_matrix(p)

    def test_zero_cell(self, tmp_path):
        p = tmp_path / "z.csv"
        save_matrix(RepresentationMatrix(np.zeros((1, 1))), p)
        assert float(p.read_text().strip()) == 0.0

    def test_random_round_trip_exact(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(100, 64)) * 10.0 ** np.arange(-8, 8, 0.25)
        p = tmp_path / "r.csv"
        save_matrix(RepresentationMatrix(data), p)
        assert np.array_equal(load_matrix(p).data, data)


class TestRepb:
    def test_round_trip_bitwise(self, tmp_path):
        data = np.random.default_rng(1).normal(size=(3, 2))
        p = tmp_path / "m.repb"
        save_matrix(RepresentationMatrix(data), p)
        back = load_matrix(p).data
        assert back.tobytes() == data.tobytes()

    def test_header_layout(self, tmp_path):
        p = tmp_path / "m.repb"
        save_matrix(RepresentationMatrix(np.ones((2, 3))), p)
        blob = p.read_bytes()
        assert blob[:4] == b"REPB"
        assert int.from_bytes(blob[4:8], "little") == 1
        assert int.from_bytes(blob[8:16], "little") == 2
        assert int.from_bytes(blob[16:24], "little") == 3
        assert len(blob) == 24 + 6 * 8

    def test_truncated_is_parse_error(self, tmp_path):
        p = tmp_path / "m.repb"
        save_matrix(RepresentationMatrix(np.ones((2, 3))), p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ParseError):
            load_matrix(p)

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(IoError):
            save_matrix(RepresentationMatrix(np.ones((1, 1))), tmp_path / "missing" / "dir" / "m.repb")

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_formats_agree(self, data):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            m = RepresentationMatrix(data)
            save_matrix(m, Path(d) / "a.repb")
            save_matrix(m, Path(d) / "a.csv")
            a = load_matrix(Path(d) / "a.repb").data
            b = load_matrix(Path(d) / "a.csv").data
        assert a.tobytes() == data.tobytes()
        assert np.array_equal(a, b)  # 17 significant digits: exact, so within 1 ulp


class TestLabels:
    def test_correctness_derived(self):
        ls = LabelSet([0, 1, 1], predicted_labels=[0, 0, 1])
        assert ls.correctness.tolist() == [True, False, True]

    def test_disagreeing_correctness_rejected(self):
        with pytest.raises(InvariantError):
            LabelSet([0, 1], predicted_labels=[0, 1], correctness=[True, False])

    def test_negative_class_rejected(self):
        with pytest.raises(InvariantError):
            LabelSet([-1, 0])

    def test_require_correctness(self):
        with pytest.raises(MissingCorrectness):
            LabelSet([0, 1]).require_correctness()

    def test_round_trip(self, tmp_path):
        ls = LabelSet([2, 0, 1], predicted_labels=[2, 1, 1])
        save_labels(ls, tmp_path / "l.csv")
        back = load_labels(tmp_path / "l.csv")
        assert back.class_labels.tolist() == [2, 0, 1]
        assert back.correctness.tolist() == [True, False, True]
        assert tmp_path.joinpath("l.csv").read_text().splitlines()[0] == "sample_id,class_label,predicted_label"
