import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import T_TABLE_95, brute_confusion, brute_multi_rp

from hoids.data import DataError, Dataset, LabelSpace
from hoids.evaluation import (CV_HEADER, confidence_interval, confusion, cross_validate,
                              error_rate, recall_precision, stratified_folds, t_quantile,
                              write_cv_csv)

FIVE = LabelSpace(("normal", "dos", "probe", "r2l", "u2r"))


def pairs(k, max_size=200):
    idx = st.integers(0, k - 1)
    return st.lists(st.tuples(idx, idx), min_size=1, max_size=max_size)


class TestConfusion:
    @given(pairs(5))
    def test_matches_brute_counts(self, ap):
        a, p = zip(*ap)
        cm = confusion(a, p, FIVE)
        assert cm.counts.tolist() == brute_confusion(a, p, 5).tolist()
        assert cm.total == len(a)

    @given(pairs(5))
    def test_multi_convention_matches_brute(self, ap):
        a, p = zip(*ap)
        cm = confusion(a, p, FIVE)
        rp = recall_precision(cm, "multi")
        r, pr = brute_multi_rp(brute_confusion(a, p, 5))
        assert rp.recall == r and rp.precision == pr
        assert rp.tp + rp.fn + rp.fp + rp.tn == len(a)
        for i in range(5):
            row = cm.counts[i].sum()
            expect = cm.counts[i, i] / row if row else None
            assert rp.per_class_recall[i] == expect

    def test_wrong_type_counts_as_false_positive(self):
        cm = confusion([1, 1, 2, 0], [1, 2, 0, 0], FIVE)
        rp = recall_precision(cm, "multi")
        assert (rp.tp, rp.fn, rp.fp, rp.tn) == (1, 1, 1, 1)
        assert rp.recall == 0.5 and rp.precision == 0.5

    def test_binary(self):
        ls = LabelSpace(("normal", "abnormal"), positive=1)
        rp = recall_precision(confusion([1, 1, 1, 0, 0], [1, 1, 0, 1, 0], ls), "binary")
        assert (rp.tp, rp.fn, rp.fp, rp.tn) == (2, 1, 1, 1)
        assert rp.recall == pytest.approx(2 / 3) and rp.precision == pytest.approx(2 / 3)

    def test_all_predicted_normal_has_no_precision(self):
        rp = recall_precision(confusion([0, 1, 2], [0, 0, 0], FIVE), "multi")
        assert rp.recall == 0.0 and rp.precision is None

    def test_sum_and_mismatch(self):
        a = confusion([0, 1], [0, 1], FIVE)
        assert (a + a).total == 4
        with pytest.raises(DataError):
            confusion([0, 1], [0], FIVE)
        with pytest.raises(DataError):
            confusion([0], [7], FIVE)
        assert "recall" in a.format()


def test_error_rate():
    assert error_rate([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5
    with pytest.raises(DataError):
        error_rate([], [])


class TestIntervals:
    @pytest.mark.parametrize("dof", sorted(T_TABLE_95))
    def test_t_table(self, dof):
        assert abs(t_quantile(0.975, dof) - T_TABLE_95[dof]) < 1e-3

    def test_t_symmetry(self):
        assert t_quantile(0.5, 4) == 0.0
        assert t_quantile(0.025, 9) == pytest.approx(-t_quantile(0.975, 9), rel=1e-14)

    def test_two_sample_hand_case(self):
        lo, hi = confidence_interval([0.0, 1.0])
        assert lo == pytest.approx(0.5 - 6.353, abs=1e-3)
        assert hi == pytest.approx(0.5 + 6.353, abs=1e-3)

    @given(st.floats(-1e6, 1e6), st.integers(2, 50))
    def test_zero_variance_is_zero_width(self, v, n):
        assert confidence_interval([v] * n) == (v, v)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            confidence_interval([1.0])


class TestFolds:
    @given(st.integers(0, 2**32 - 1), st.integers(10, 300), st.integers(2, 6))
    def test_partition(self, seed, n, k):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, k, n)
        folds = 10
        f = stratified_folds(y, folds, np.random.default_rng(seed))
        assert f.shape == (n,) and set(f.tolist()) <= set(range(folds))
        sizes = np.bincount(f, minlength=folds)
        assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
        for c in np.unique(y):
            per = np.bincount(f[y == c], minlength=folds)
            assert per.max() - per.min() <= 1

    def test_two_hundred_random_datasets(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(10, 200))
            y = rng.integers(0, 4, n)
            f = stratified_folds(y, 10, rng)
            parts = [set(np.flatnonzero(f == i)) for i in range(10)]
            assert set().union(*parts) == set(range(n))
            assert sum(len(p) for p in parts) == n


class Constant:
    def __init__(self, cls):
        self.cls = cls

    def predict(self, X):
        return np.full(len(X), self.cls)


class TestCrossValidate:
    DS = Dataset.from_arrays(np.arange(60.0)[:, None], np.arange(60) % 3, ["normal", "a", "b"])

    def test_constant_predictor_zero_width(self):
        res = cross_validate(self.DS, lambda d: Constant(1), repeats=2, folds=5)
        assert res.n == 10
        # wrong-type intrusions are false positives, not misses
        assert res.mean_r == 1.0 and res.ci_r == (1.0, 1.0)
        assert res.mean_p == pytest.approx(1 / 3)
        assert res.confusion.total == 2 * 60

    def test_undefined_precision_is_skipped(self):
        res = cross_validate(self.DS, lambda d: Constant(0), repeats=1, folds=5)
        assert res.mean_p is None and res.skipped_p == 5 and res.mean_r == 0.0

    def test_deterministic(self, ics):
        from hoids.model import train_multi
        from hoids.optimizer import QNConfig
        small = ics.subset(np.arange(0, ics.n, 20))

        def trainer(d):
            return train_multi(d, QNConfig(max_iters=30))[0]
        a = cross_validate(small, trainer, repeats=1, folds=3, seed=5)
        b = cross_validate(small, trainer, repeats=1, folds=3, seed=5)
        assert a.per_run_recall == b.per_run_recall and a.confusion == b.confusion

    def test_too_few_samples(self):
        with pytest.raises(DataError):
            cross_validate(self.DS.subset(np.arange(4)), lambda d: Constant(0), folds=10)

    def test_csv(self, tmp_path):
        res = cross_validate(self.DS, lambda d: Constant(1), repeats=1, folds=3)
        p = tmp_path / "cv.csv"
        write_cv_csv([res.csv_row("all")], p)
        lines = p.read_text().splitlines()
        assert lines[0] == ",".join(CV_HEADER)
        assert lines[1].startswith("all,3,1.0,1.0,1.0,")
        assert math.isfinite(float(lines[1].split(",")[3]))
