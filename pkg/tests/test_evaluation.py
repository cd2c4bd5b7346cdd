import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rganctr.errors import ValidationError
from rganctr.evaluation import auc, kendall_tau, kendall_tau_rows, rela_impr, tau_diagnostic

from oracles import auc_pairs, kendall_pairs


class TestAuc:
    def test_perfect_and_reversed(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
        assert auc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0

    def test_all_tied(self):
        assert auc(np.zeros(6), [1, 0, 1, 0, 0, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            auc([0.1, 0.2], [1, 1])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 200))
    def test_matches_pair_count(self, seed, n):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 8, n).astype(float)  # coarse grid forces ties
        assert auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_invariant_to_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        s, y = rng.normal(size=50), rng.integers(0, 2, 50)
        y[:2] = [0, 1]
        assert auc(s, y) == auc(np.exp(3 * s) - 1, y)


class TestRelaImpr:
    @pytest.mark.parametrize("measured, base, expected", [
        (0.7745, 0.7639, 4.02),
        (0.7745, 0.7405, 14.14),
    ])
    def test_reported_pairs(self, measured, base, expected):
        assert abs(rela_impr(measured, base) - expected) <= 0.01

    def test_equal_models(self):
        assert rela_impr(0.7, 0.7) == 0.0

    def test_random_base_rejected(self):
        with pytest.raises(ValidationError):
            rela_impr(0.7, 0.5)


class TestKendall:
    def test_identical_and_reversed(self):
        assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0

    def test_all_tied_is_zero(self):
        assert kendall_tau([1, 1, 1], [1, 2, 3]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            kendall_tau([1, 2], [1, 2, 3])

    @given(st.lists(st.integers(0, 4), min_size=2, max_size=10).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))))
    def test_matches_pair_counting(self, ab):
        a, b = ab
        assert kendall_tau(a, b) == pytest.approx(kendall_pairs(a, b), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_rows_agree_with_scalar(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, 5, (6, 7)), rng.integers(0, 5, (6, 7))
        rows = kendall_tau_rows(a, b)
        for i in range(6):
            assert rows[i] == pytest.approx(kendall_pairs(a[i].tolist(), b[i].tolist()), abs=1e-12)

    def test_diagnostic_near_zero_for_random_ranking(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=(400, 20))
        tau, tau_rand = tau_diagnostic(scores, -scores, np.random.default_rng(1))
        assert tau == pytest.approx(1.0)
        assert abs(tau_rand) < 0.02
