import re

import numpy as np
import pytest

from gamformer.binning import BinSpec, fit_categorical_bins, fit_specs
from gamformer.plotting import bin_counts, render_boundary_svg, render_shapes_svg
from gamformer.shapes import (
    CSV_HEADER,
    FormatError,
    ShapeModel,
    export_shapes_csv,
    import_shapes_csv,
    load_shape_model,
    predict_logits,
    predict_proba,
    save_shape_model,
    shape_model_from_bytes,
    shape_model_to_bytes,
    softmax_link,
)


def _model(p=2, n_bins=4, m=2, seed=0, **kw):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, p))
    specs = fit_specs(X, n_bins)
    values = rng.normal(size=(p, n_bins, m)).astype(np.float32)
    return ShapeModel(values, specs, rng.normal(size=m).astype(np.float32), **kw), X


class TestPredict:
    def test_zero_model_is_uniform(self):
        specs = [BinSpec(4, edges=np.array([0.0]))] * 3
        model = ShapeModel(np.zeros((3, 4, 3)), specs)
        np.testing.assert_allclose(predict_proba(model, [0.5, -1.0, 2.0]), [1 / 3] * 3)

    def test_hand_computed_logits(self):
        spec = BinSpec(2, edges=np.array([0.0]))
        values = np.array([[[0.0, 1.0], [0.0, -1.0]], [[0.0, 0.5], [0.0, 2.0]]])
        model = ShapeModel(values, [spec, spec], intercept=[0.0, 0.25])
        # x0 <= 0 -> bin 0, x1 > 0 -> bin 1
        np.testing.assert_allclose(predict_logits(model, [-1.0, 3.0]), [0.0, 0.25 + 1.0 + 2.0])

    def test_one_lookup_per_feature(self):
        model, X = _model(p=3, m=3)
        idx = model.bin_indices(X)
        manual = np.tile(model.intercept.astype(float), (len(X), 1))
        for i in range(3):
            manual += model.values[i, idx[:, i]]
        np.testing.assert_allclose(model.predict_logits(X), manual, rtol=1e-12)
        np.testing.assert_allclose(model.term_contributions(X).sum(1) + model.intercept, manual, atol=1e-5)

    def test_proba_rows_sum_to_one(self):
        model, X = _model(m=4)
        np.testing.assert_allclose(model.predict_proba(X).sum(1), 1.0)

    def test_softmax_link_stable(self):
        out = softmax_link(np.array([[1000.0, 0.0]]))
        np.testing.assert_allclose(out, [[1.0, 0.0]])

    def test_centering_preserves_predictions(self):
        model, X = _model(m=3)
        c = model.centered()
        np.testing.assert_allclose(c.predict_proba(X), model.predict_proba(X), atol=1e-6)
        np.testing.assert_allclose(c.values.mean(axis=1), 0.0, atol=1e-6)

    def test_nan_rejected(self):
        model, _ = _model()
        with pytest.raises(ValueError):
            model.predict_logits(np.array([[np.nan, 0.0]]))

    def test_wrong_width(self):
        model, _ = _model()
        with pytest.raises(ValueError):
            model.predict_logits(np.zeros((1, 3)))

    def test_pairs_expand_raw_inputs(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 2))
        Xa = np.column_stack([X, X[:, 0] * X[:, 1]])
        specs = fit_specs(Xa, 4)
        model = ShapeModel(rng.normal(size=(3, 4, 2)), specs, pairs=[(0, 1)])
        np.testing.assert_array_equal(model.predict_logits(X), model.predict_logits(Xa))

    def test_invalid_values(self):
        spec = BinSpec(2)
        with pytest.raises(ValueError):
            ShapeModel(np.full((1, 2, 2), np.inf), [spec])
        with pytest.raises(ValueError):
            ShapeModel(np.zeros((2, 2, 2)), [spec])


class TestBinaryFormat:
    def test_round_trip_bitwise(self, tmp_path):
        model, _ = _model(p=3, m=3, provenance="ebm-lite", feature_names=["a", "b,c", "d"])
        path = tmp_path / "m.gams"
        save_shape_model(model, path)
        back = load_shape_model(path)
        assert back == model
        assert shape_model_to_bytes(back) == path.read_bytes()

    def test_categorical_and_pairs_round_trip(self):
        rng = np.random.default_rng(2)
        cat = fit_categorical_bins(np.array([0, 1, 2, 1, 0], float), 8)
        num = fit_specs(rng.normal(size=(20, 2)), 8)
        model = ShapeModel(rng.normal(size=(3, 8, 2)), [cat, *num], pairs=[(1, 0)])
        assert shape_model_from_bytes(shape_model_to_bytes(model)) == model

    def test_truncated(self):
        buf = shape_model_to_bytes(_model()[0])
        for cut in (3, 10, len(buf) - 1):
            with pytest.raises(FormatError):
                shape_model_from_bytes(buf[:cut])

    def test_trailing_bytes(self):
        buf = shape_model_to_bytes(_model()[0])
        with pytest.raises(FormatError):
            shape_model_from_bytes(buf + b"\0")

    def test_bad_magic(self):
        buf = shape_model_to_bytes(_model()[0])
        with pytest.raises(FormatError):
            shape_model_from_bytes(b"NOPE" + buf[4:])


class TestCSV:
    def test_row_count_and_header(self):
        model, _ = _model(p=3, n_bins=5, m=2)
        text = export_shapes_csv(model)
        data = [l for l in text.splitlines() if not l.startswith("#")]
        assert data[0].split(",") == CSV_HEADER
        assert len(data) - 1 == 3 * 5 * 2

    def test_round_trip(self, tmp_path):
        model, X = _model(p=2, n_bins=6, m=3, feature_names=["age", "dose"])
        path = tmp_path / "s.csv"
        export_shapes_csv(model, path)
        back = import_shapes_csv(path)
        np.testing.assert_array_equal(back.values, model.values)
        np.testing.assert_array_equal(back.intercept, model.intercept)
        np.testing.assert_array_equal(back.predict_logits(X), model.predict_logits(X))

    def test_categorical_round_trip(self):
        cat = fit_categorical_bins(np.array([3, 5, 5, 9], float), 6)
        model = ShapeModel(np.arange(12, dtype=float).reshape(1, 6, 2), [cat])
        back = import_shapes_csv(export_shapes_csv(model))
        assert back.specs[0].categorical_map == cat.categorical_map
        assert back == model

    def test_centered_export(self):
        model, X = _model(m=2)
        back = import_shapes_csv(export_shapes_csv(model, center=True))
        np.testing.assert_allclose(back.predict_proba(X), model.predict_proba(X), atol=1e-6)

    def test_bad_header(self):
        with pytest.raises(FormatError):
            import_shapes_csv("a,b\n1,2\n")


class TestSVG:
    def test_one_panel_per_feature(self):
        model, X = _model(p=4, m=2)
        svg = render_shapes_svg(model, bin_counts(model, X))
        assert svg.count('<g class="panel"') == 4
        assert svg.count('<path class="shape"') == 4 * 2
        assert svg.strip().endswith("</svg>")

    def test_density_strip_matches_counts(self):
        model, X = _model(p=1, n_bins=4)
        counts = bin_counts(model, X)
        assert counts[0].sum() == len(X)
        svg = render_shapes_svg(model, counts)
        heights = [float(h) for h in re.findall(r'<rect x="[^"]+" y="[^"]+" width="[^"]+" height="([^"]+)" fill="#bbbbbb"', svg)]
        assert len(heights) == model.specs[0].n_effective
        np.testing.assert_allclose(np.array(heights) / max(heights), counts[0][: len(heights)] / counts[0].max(), atol=1e-3)

    def test_no_density(self):
        model, _ = _model(p=2)
        svg = render_shapes_svg(model)
        assert "#bbbbbb" not in svg

    def test_writes_file(self, tmp_path):
        model, _ = _model()
        path = tmp_path / "f.svg"
        assert render_shapes_svg(model, path=path) == path.read_text()

    def test_boundary(self):
        model, X = _model(p=2)
        svg = render_boundary_svg(model, X, np.zeros(len(X), int), resolution=10)
        assert svg.count("<circle") == len(X)
        assert svg.count("<rect") == 1 + 100
