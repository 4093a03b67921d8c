"""Exact summaries, grouped means, and the streaming summary path."""

import numpy as np
import pytest

import oracles
from lossdiag import (
    DegenerateInputError,
    LossVector,
    SummarySet,
    ValidationError,
    grouped_summary,
    summarize_chunks,
    summarize_exact,
)
from lossdiag.render import summary_table


def _vector(values):
    return LossVector("v", np.asarray(values, dtype=np.float32))


def _random_losses(rng):
    size = int(rng.integers(1, 400))
    kind = rng.integers(3)
    if kind == 0:
        vals = rng.lognormal(0.0, 1.0, size)
    elif kind == 1:
        # Heavy duplication exercises the tie branches.
        vals = rng.integers(0, 4, size).astype(np.float64) / 2.0
    else:
        vals = rng.gamma(1.5, 1.0, size)
        if size > 2:
            vals[rng.integers(size)] = np.inf
    return vals.astype(np.float32)


class TestExactPercentiles:
    def test_three_values(self):
        s = summarize_exact(_vector([1.0, 2.0, 3.0]), ks=(25, 50, 75))
        assert s.percentiles[50] == 2.0
        assert s.percentiles[25] == 1.5
        assert s.percentiles[75] == 2.5
        assert s.mean == 2.0
        assert s.count == 3

    def test_matches_sort_oracle_everywhere(self):
        rng = np.random.default_rng(11)
        ks = tuple(range(1, 100))
        for _ in range(100):
            vals = _random_losses(rng)
            s = summarize_exact(_vector(vals), ks=ks)
            for k in ks:
                assert s.percentiles[k] == oracles.percentile_by_sort(vals, k)

    def test_lognormal_hundred_thousand(self):
        rng = np.random.default_rng(5)
        vals = rng.lognormal(0.0, 1.2, 100_000).astype(np.float32)
        s = summarize_exact(_vector(vals))
        for k in (1, 25, 50, 75, 99):
            assert s.percentiles[k] == oracles.percentile_by_sort(vals, k)

    def test_inf_brackets_do_not_produce_nan(self):
        # Both bracketing order statistics +inf: value is +inf, never NaN.
        s = summarize_exact(_vector([1.0, np.inf, np.inf]), ks=(75, 99))
        assert s.percentiles[75] == np.inf
        assert s.percentiles[99] == np.inf

    def test_interpolation_toward_inf_is_inf(self):
        s = summarize_exact(_vector([1.0, np.inf]), ks=(50,))
        assert s.percentiles[50] == np.inf
        assert s.mean == np.inf  # documented: +inf mean, not an error

    def test_percentile_validation(self):
        with pytest.raises(ValidationError):
            summarize_exact(_vector([1.0]), ks=())
        with pytest.raises(ValidationError):
            summarize_exact(_vector([1.0]), ks=(0,))
        with pytest.raises(ValidationError):
            summarize_exact(_vector([1.0]), ks=(100,))
        with pytest.raises(ValidationError):
            summarize_exact(_vector([1.0]), ks=(50, 50))


class TestSummarySet:
    def test_value_lookup_aliases(self):
        s = SummarySet("c", mean=1.708, percentiles={50: 0.525, 95: 7.82}, count=10)
        assert s.value("mean") == 1.708
        assert s.value("median") == 0.525
        assert s.value("p95") == 7.82
        with pytest.raises(ValidationError, match="'c'.*'p99'"):
            s.value("p99")

    def test_non_monotone_percentiles_rejected(self):
        with pytest.raises(ValidationError, match="non-decreasing"):
            SummarySet("c", mean=1.0, percentiles={50: 2.0, 75: 1.0}, count=1)

    def test_bad_count_and_mean(self):
        with pytest.raises(ValidationError):
            SummarySet("c", mean=1.0, percentiles={50: 1.0}, count=0)
        with pytest.raises(ValidationError):
            SummarySet("c", mean=-0.5, percentiles={50: 1.0}, count=1)

    def test_report_row_rendering(self):
        s = SummarySet("student-top5", mean=1.708, percentiles={50: 0.525, 95: 7.82}, count=4)
        text = summary_table([s])
        assert text.splitlines()[0] == "checkpoint_id,mean,p50,p95,count"
        assert text.splitlines()[1] == "student-top5,1.708,0.525,7.82,4"


class TestGroupedSummary:
    def test_group_means_and_ratio(self):
        # 2.49 at two decimals: the correct/incorrect mean-ratio layout.
        vals = np.array([0.243] * 60 + [0.605] * 40, dtype=np.float32)
        labels = np.array([True] * 60 + [False] * 40)
        g = grouped_summary(LossVector("e", vals), labels)
        np.testing.assert_allclose(g.mean_true, 0.243, rtol=1e-6)
        np.testing.assert_allclose(g.mean_false, 0.605, rtol=1e-6)
        assert round(g.ratio, 2) == 2.49

    def test_empty_group_is_degenerate(self):
        v = _vector([1.0, 2.0])
        with pytest.raises(DegenerateInputError):
            grouped_summary(v, [True, True])
        with pytest.raises(DegenerateInputError):
            grouped_summary(v, [False, False])

    def test_label_length_mismatch(self):
        with pytest.raises(ValidationError, match="length"):
            grouped_summary(_vector([1.0, 2.0]), [True])


class TestStreamingSummary:
    def test_constant_stream(self):
        chunks = [np.full(1000, 0.7) for _ in range(5)]
        s = summarize_chunks("c", chunks, ks=(5, 50, 95))
        assert s.count == 5000
        np.testing.assert_allclose(s.mean, 0.7, rtol=1e-12)
        assert all(v == 0.7 for v in s.percentiles.values())

    def test_mean_is_exact_and_ranks_within_epsilon(self):
        rng = np.random.default_rng(23)
        vals = rng.lognormal(0.0, 1.0, 100_000)
        epsilon = 1e-3
        s = summarize_chunks("c", np.array_split(vals, 13), epsilon=epsilon)
        np.testing.assert_allclose(s.mean, vals.mean(), rtol=1e-12)
        srt = np.sort(vals)
        n = vals.size
        for k, v in s.percentiles.items():
            below = np.searchsorted(srt, v, side="left")
            at_or_below = np.searchsorted(srt, v, side="right")
            assert below / n <= k / 100 + epsilon
            assert at_or_below / n >= k / 100 - epsilon

    def test_finalized_percentiles_non_decreasing(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            vals = rng.lognormal(0.0, 2.0, 20_000)
            s = summarize_chunks("c", [vals])
            seq = [s.percentiles[k] for k in s.ks]
            assert all(a <= b for a, b in zip(seq, seq[1:]))

    def test_empty_stream_rejected(self):
        with pytest.raises(ValidationError, match="no values"):
            summarize_chunks("c", [])
