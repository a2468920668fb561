import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamformer.bench.datasets import DataError, generate_toy
from gamformer.bench.evaluation import (
    CONTEXT_MULTIPLIERS,
    NOISE_RATES,
    _label_noise_point,
    cross_validate,
    flip_labels,
    holdout_scores,
    robustness_suite,
)
from gamformer.bench.metrics import roc_auc
from gamformer.estimators import default_checkpoint_path
from gamformer.priors import SupervisedTask


@pytest.fixture(scope="module")
def linear():
    return generate_toy("linear3", n=400, seed=0)


class TestCrossValidate:
    def test_separable_folds(self, linear):
        rep = cross_validate(linear, k=2)
        assert rep.k == 2
        assert min(rep.fold_auc) >= 0.95
        assert rep.provenance == "icl"

    def test_fold_sizes_balanced(self, linear):
        rep = cross_validate(linear, model="ebm", k=5, seed=3)
        sizes = np.bincount(rep.folds)
        assert len(sizes) == 5 and sizes.max() - sizes.min() <= 1

    def test_deterministic(self, linear):
        a = cross_validate(linear, k=3, seed=1)
        b = cross_validate(linear, k=3, seed=1)
        assert a.fold_auc == b.fold_auc
        np.testing.assert_array_equal(a.scores, b.scores)
        assert a.config_hash == b.config_hash

    def test_fold_auc_matches_scores(self, linear):
        rep = cross_validate(linear, model="ebm", k=3)
        for f, auc in enumerate(rep.fold_auc):
            sel = rep.folds == f
            assert auc == roc_auc(rep.scores[sel], linear.y[sel])

    def test_summary_record(self, linear):
        rep = cross_validate(linear, model="ebm", k=3)
        rows = [json.loads(l) for l in rep.to_ndjson().splitlines()]
        assert rows[-1]["mean"] == pytest.approx(np.mean(rep.fold_auc))
        assert rows[-1]["stderr"] == pytest.approx(np.std(rep.fold_auc, ddof=1) / np.sqrt(3))
        assert rows[-1]["provenance"] == "ebm-lite"

    def test_hash_depends_on_config(self, linear):
        assert cross_validate(linear, model="ebm", k=2).config_hash != cross_validate(linear, model="ebm", k=3).config_hash

    def test_too_few_rows_per_class(self):
        X = np.arange(6, dtype=float)[:, None]
        y = np.array([0, 0, 0, 0, 0, 1])
        task = SupervisedTask(X, y, 2, np.zeros(1, bool), np.arange(6), np.arange(0))
        with pytest.raises(DataError):
            cross_validate(task, k=2)

    def test_bad_k(self, linear):
        with pytest.raises(ValueError):
            cross_validate(linear, k=1)


class TestFlipLabels:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
    def test_nested(self, seed, a, b):
        lo, hi = sorted((a, b))
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, 50)
        u = rng.uniform(size=50)
        changed_lo = flip_labels(y, lo, u) != y
        changed_hi = flip_labels(y, hi, u) != y
        assert np.all(changed_hi[changed_lo])

    def test_zero_rate_is_identity(self):
        y = np.array([0, 1, 1, 0])
        np.testing.assert_array_equal(flip_labels(y, 0.0, np.zeros(4)), y)


class TestRobustness:
    def test_zero_noise_equals_holdout(self):
        point = _label_noise_point((str(default_checkpoint_path()), 5, ("icl",)))
        _, auc = holdout_scores(generate_toy("centroids", seed=5))
        assert point["icl"][0] == auc
        assert len(point["icl"]) == len(NOISE_RATES)

    def test_report_shape_and_table(self):
        rep = robustness_suite(study="context_scaling", n_seeds=2, models=("icl",))
        assert rep.values == CONTEXT_MULTIPLIERS
        assert all(len(rep.auc["icl"][v]) == 2 for v in rep.values)
        assert len(rep.table().splitlines()) == 1 + len(CONTEXT_MULTIPLIERS)
        assert len(rep.records()) == len(CONTEXT_MULTIPLIERS)

    def test_workers_match_serial(self):
        a = robustness_suite(study="imbalance", n_seeds=2, models=("ebm",))
        b = robustness_suite(study="imbalance", n_seeds=2, models=("ebm",), workers=2)
        assert a.auc == b.auc

    def test_noise_hurts(self):
        rep = robustness_suite(study="label_noise", n_seeds=4, models=("icl",))
        med = rep.median("icl")
        assert med[-1] < med[0]

    def test_unknown_study(self):
        with pytest.raises(ValueError):
            robustness_suite(study="drift")
