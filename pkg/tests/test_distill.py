"""Tabular top-K distillation lab: math helpers, training, oracle, sweep."""

import math

import numpy as np
import pytest
import scipy.special

from lossdiag import (
    DivergenceError,
    LabConfig,
    TabularLM,
    ValidationError,
    chain_fidelity,
    converged_oracle,
    converged_student,
    distill_loss,
    distill_student,
    dose_response,
    fit_teacher,
    kl,
    kl_grad_logits,
    log_softmax,
    next_token_accuracy,
    per_token_ce,
    softmax,
    synth_corpus,
    topk_renormalize,
    true_chain,
    zipf_weights,
)
from lossdiag.distill import check_distribution

import oracles


def _random_dist(rng, v):
    p = rng.gamma(0.7, 1.0, v)
    return p / p.sum()


class TestCheckDistribution:
    def test_rejections(self):
        for bad in ([0.5], [[0.5, 0.5]], [0.5, math.nan], [0.5, math.inf],
                    [-0.1, 1.1], [0.5, 0.6]):
            with pytest.raises(ValidationError):
                check_distribution(bad)

    def test_passthrough(self):
        out = check_distribution([0.25, 0.75])
        assert out.dtype == np.float64
        assert out.tolist() == [0.25, 0.75]


class TestSoftmax:
    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        z = rng.normal(scale=3.0, size=(5, 9))
        assert np.allclose(softmax(z), scipy.special.softmax(z, axis=-1), atol=1e-14)
        assert np.allclose(log_softmax(z), scipy.special.log_softmax(z, axis=-1), atol=1e-12)

    def test_stable_under_large_logits(self):
        z = np.array([1000.0, 1001.0, 999.0])
        p = softmax(z)
        assert np.isfinite(p).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.isfinite(log_softmax(z)).all()


class TestTopKRenormalize:
    def test_full_k_is_identity(self):
        rng = np.random.default_rng(11)
        p = _random_dist(rng, 10)
        assert np.allclose(topk_renormalize(p, 10), p, atol=1e-14)

    def test_hand_case(self):
        out = topk_renormalize([0.5, 0.3, 0.2], 2)
        assert out[2] == 0.0
        assert out[0] == pytest.approx(0.625, abs=1e-12)
        assert out[1] == pytest.approx(0.375, abs=1e-12)

    def test_tie_breaks_to_lower_index(self):
        out = topk_renormalize([0.4, 0.3, 0.3], 2)
        assert out[2] == 0.0
        assert out[1] > 0.0

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            v = int(rng.integers(2, 40))
            k = int(rng.integers(1, v + 1))
            p = _random_dist(rng, v)
            ours = topk_renormalize(p, k)
            ref = oracles.topk_by_sort(list(p), k)
            assert np.allclose(ours, ref, atol=1e-12)
            assert [x == 0.0 for x in ours] == [x == 0.0 for x in ref]

    def test_idempotent(self):
        p = _random_dist(np.random.default_rng(17), 12)
        once = topk_renormalize(p, 4)
        twice = topk_renormalize(once, 4)
        assert np.allclose(once, twice, rtol=1e-14)

    def test_k_validation(self):
        p = [0.5, 0.5]
        for k in (0, 3, 1.5, -1):
            with pytest.raises(ValidationError):
                topk_renormalize(p, k)


class TestKL:
    def test_self_divergence_is_zero(self):
        p = _random_dist(np.random.default_rng(19), 8)
        assert kl(p, p) == 0.0

    def test_hand_case(self):
        assert kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_support_violation_is_inf(self):
        assert kl([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_matches_bignum_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            v = int(rng.integers(2, 30))
            p = _random_dist(rng, v)
            q = _random_dist(rng, v)
            assert kl(p, q) == pytest.approx(oracles.kl_mp(p, q), rel=1e-12)

    def test_nonnegative_and_zero_only_at_equality(self):
        rng = np.random.default_rng(29)
        p = _random_dist(rng, 6)
        q = p.copy()
        q[0] += 1e-6
        q /= q.sum()
        assert kl(p, q) > 0.0
        for _ in range(10):
            assert kl(_random_dist(rng, 6), _random_dist(rng, 6)) >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            kl([0.5, 0.5], [0.4, 0.3, 0.3])


class TestKLGradient:
    def test_zero_at_minimum(self):
        p = _random_dist(np.random.default_rng(31), 7)
        grad = kl_grad_logits(p, np.log(p))
        assert np.max(np.abs(grad)) <= 1e-12

    def test_matches_central_differences(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            v = int(rng.integers(2, 16))
            p = _random_dist(rng, v)
            z = rng.normal(size=v)

            def objective(logits):
                return kl(p, softmax(np.asarray(logits)))

            numeric = np.array(oracles.central_difference(objective, z, h=1e-5))
            analytic = kl_grad_logits(p, z)
            rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
            assert rel <= 1e-6

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(41)
        p = _random_dist(rng, 9)
        z = rng.normal(size=9)
        assert kl_grad_logits(p, z).sum() == pytest.approx(0.0, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError):
            kl_grad_logits([0.5, 0.5], [0.0, 0.0, 0.0])
        with pytest.raises(ValidationError):
            kl_grad_logits([0.5, 0.5], [0.0, math.inf])


class TestTabularLM:
    def test_requires_square_logits(self):
        with pytest.raises(ValidationError):
            TabularLM(logits=np.zeros((2, 3)))
        with pytest.raises(ValidationError):
            TabularLM(logits=np.zeros(4))

    def test_nan_and_plus_inf_rejected_minus_inf_allowed(self):
        with pytest.raises(ValidationError):
            TabularLM(logits=np.array([[0.0, math.nan], [0.0, 0.0]]))
        with pytest.raises(ValidationError):
            TabularLM(logits=np.array([[0.0, math.inf], [0.0, 0.0]]))
        model = TabularLM(logits=np.array([[0.0, -math.inf], [0.0, 0.0]]))
        assert model.row_dist(0).tolist() == [1.0, 0.0]

    def test_weights_validation(self):
        z = np.zeros((2, 2))
        with pytest.raises(ValidationError):
            TabularLM(logits=z, context_weights=np.array([1.0]))
        with pytest.raises(ValidationError):
            TabularLM(logits=z, context_weights=np.array([-0.1, 1.1]))
        with pytest.raises(ValidationError):
            TabularLM(logits=z, context_weights=np.array([math.inf, 0.0]))

    def test_arrays_frozen(self):
        model = TabularLM(logits=np.zeros((2, 2)), context_weights=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            model.logits[0, 0] = 1.0
        with pytest.raises(ValueError):
            model.context_weights[0] = 1.0

    def test_prob_views_consistent(self):
        rng = np.random.default_rng(43)
        model = TabularLM(logits=rng.normal(size=(5, 5)))
        assert model.vocab_size == 5
        assert np.allclose(model.probs(), np.exp(model.log_probs()), atol=1e-14)
        assert np.allclose(model.probs()[2], model.row_dist(2), atol=1e-15)
        assert np.allclose(model.probs().sum(axis=1), 1.0, atol=1e-12)


class TestWorldGenerators:
    def test_zipf_weights(self):
        w = zipf_weights(3, 1.0)
        assert np.allclose(w, np.array([6.0, 3.0, 2.0]) / 11.0, atol=1e-15)
        assert (np.diff(zipf_weights(50, 1.1)) < 0).all()
        with pytest.raises(ValidationError):
            zipf_weights(10, 0.0)

    def test_true_chain_is_deterministic_and_valid(self):
        base1, rows1 = true_chain(5, 16, 1.1)
        base2, rows2 = true_chain(5, 16, 1.1)
        assert np.array_equal(base1, base2)
        assert np.array_equal(rows1, rows2)
        assert np.array_equal(base1, zipf_weights(16, 1.1))
        for row in rows1:
            check_distribution(row)

    def test_corpus_reproducible_and_in_range(self):
        a = synth_corpus(9, 8, 1.1, 10_000)
        b = synth_corpus(9, 8, 1.1, 10_000)
        assert np.array_equal(a, b)
        assert a.min() >= 0 and a.max() < 8
        held_out = synth_corpus(9, 8, 1.1, 10_000, split=1)
        assert not np.array_equal(a, held_out)

    def test_corpus_validation(self):
        with pytest.raises(ValidationError):
            synth_corpus(1, 4, 1.1, 10_000)
        with pytest.raises(ValidationError):
            synth_corpus(1, 8, 1.1, 500)
        with pytest.raises(ValidationError):
            synth_corpus(1, 8, 1.1, 10_000, concentration=-1.0)


class TestFitTeacher:
    def test_hand_counted_bigram(self):
        model = fit_teacher(np.array([0, 1, 0, 1]), alpha=1.0, vocab=2)
        assert np.allclose(model.probs()[0], [0.25, 0.75], atol=1e-12)
        assert np.allclose(model.probs()[1], [2 / 3, 1 / 3], atol=1e-12)
        assert np.allclose(model.context_weights, [2 / 3, 1 / 3], atol=1e-15)

    def test_huge_alpha_approaches_uniform(self):
        stream = synth_corpus(2, 8, 1.1, 10_000)
        model = fit_teacher(stream, alpha=1e9)
        assert np.allclose(model.probs(), 1.0 / 8.0, atol=1e-6)

    def test_rows_are_distributions(self):
        stream = synth_corpus(3, 16, 1.1, 20_000)
        model = fit_teacher(stream, alpha=0.1)
        for row in model.probs():
            check_distribution(row)
        assert model.context_weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError):
            fit_teacher(np.array([0, 1]), alpha=0.0)
        with pytest.raises(ValidationError):
            fit_teacher(np.array([3]), alpha=1.0)
        with pytest.raises(ValidationError):
            fit_teacher(np.array([0, -1]), alpha=1.0)
        with pytest.raises(ValidationError):
            fit_teacher(np.array([0, 5]), alpha=1.0, vocab=4)


@pytest.fixture(scope="module")
def small_world():
    stream = synth_corpus(21, 8, 1.1, 10_000)
    return fit_teacher(stream, alpha=0.1, vocab=8)


class TestDistillStudent:
    def test_full_k_converges_to_teacher(self, small_world):
        # Row gradients are scaled by context weight, so the rarest context
        # (weight ~6e-4 here) sets the budget: 20k steps at lr 16 bring even
        # that row within a 1e-3 total-variation ball of its target.
        student = distill_student(small_world, "full", steps=20_000, learning_rate=16.0)
        tv = 0.5 * np.abs(student.probs() - small_world.probs()).sum(axis=1)
        assert tv.max() <= 1e-3

    def test_more_steps_do_not_hurt(self, small_world):
        short = distill_student(small_world, 4, steps=50, learning_rate=4.0)
        long = distill_student(small_world, 4, steps=500, learning_rate=4.0)
        assert (distill_loss(small_world, long, 4)
                <= distill_loss(small_world, short, 4) + 1e-12)

    def test_seed_has_no_effect(self, small_world):
        a = distill_student(small_world, 2, steps=10, learning_rate=1.0, seed=1)
        b = distill_student(small_world, 2, steps=10, learning_rate=1.0, seed=2)
        assert np.array_equal(a.logits, b.logits)

    def test_runaway_rate_raises(self, small_world):
        with pytest.raises(DivergenceError) as exc:
            distill_student(small_world, 2, steps=10, learning_rate=1e9)
        assert exc.value.step >= 0
        assert 0 <= exc.value.row < 8

    def test_hyperparameter_validation(self, small_world):
        with pytest.raises(ValidationError):
            distill_student(small_world, 2, steps=0, learning_rate=1.0)
        with pytest.raises(ValidationError):
            distill_student(small_world, 2, steps=10, learning_rate=0.0)
        with pytest.raises(ValidationError):
            distill_student(small_world, 2, steps=10, learning_rate=math.inf)
        with pytest.raises(ValidationError):
            distill_student(small_world, 9, steps=10, learning_rate=1.0)


class TestConvergedStudent:
    def test_epsilon_bounds(self, small_world):
        for eps in (0.0, 1e-5, -1e-9):
            with pytest.raises(ValidationError):
                converged_student(small_world, 2, epsilon_q=eps)

    def test_full_k_equals_teacher(self, small_world):
        student = converged_student(small_world, "full")
        assert np.allclose(student.probs(), small_world.probs(), atol=1e-12)

    def test_rows_sum_to_one_with_floor(self, small_world):
        student = converged_student(small_world, 2, epsilon_q=1e-6)
        probs = student.probs()
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        # Six of eight entries per row sit at the (renormalized) floor.
        for row in probs:
            floor = np.sort(row)[:6]
            assert np.allclose(floor, floor[0], rtol=1e-9)
            assert floor[0] == pytest.approx(1e-6, rel=1e-3)


def _flat_teacher(row):
    v = len(row)
    return TabularLM(logits=np.log(np.tile(row, (v, 1))))


class TestConvergedOracle:
    def test_analytic_truncation_costs(self):
        # Every context shares the row (0.5, 0.3, 0.12, 0.08). Keeping K=2
        # renormalizes to (0.625, 0.375): a transition onto token 0 costs
        # -log 0.625 for the truncated student vs -log 0.5 for the teacher.
        teacher = _flat_teacher([0.5, 0.3, 0.12, 0.08])
        stream = np.zeros(1_000, dtype=np.int64)
        result = converged_oracle(teacher, 2, epsilon_q=1e-6, eval_stream=stream)
        assert result.summary.mean == pytest.approx(-math.log(0.625), abs=1e-5)
        assert result.summary.value("median") == pytest.approx(-math.log(0.625), abs=1e-5)
        teacher_ce = per_token_ce(teacher, stream)
        assert teacher_ce[0] == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_vocab_sized_k_labels_full(self):
        teacher = _flat_teacher([0.5, 0.3, 0.12, 0.08])
        stream = np.zeros(10, dtype=np.int64)
        result = converged_oracle(teacher, 4, eval_stream=stream)
        assert result.summary.checkpoint_id == "student-kfull-oracle"

    def test_no_stream_no_summary(self, small_world):
        assert converged_oracle(small_world, 2).summary is None


class TestPerTokenCE:
    def test_hand_case(self):
        model = _flat_teacher([0.5, 0.3, 0.12, 0.08])
        losses = per_token_ce(model, np.array([0, 1, 0]))
        assert losses == pytest.approx([-math.log(0.3), -math.log(0.5)], abs=1e-12)

    def test_zero_probability_transition_is_inf(self):
        model = TabularLM(logits=np.array([[0.0, -math.inf], [0.0, 0.0]]))
        losses = per_token_ce(model, np.array([0, 1]))
        assert losses[0] == math.inf

    def test_validation(self):
        model = _flat_teacher([0.5, 0.5])
        with pytest.raises(ValidationError):
            per_token_ce(model, np.array([0]))
        with pytest.raises(ValidationError):
            per_token_ce(model, np.array([0, 2]))
        with pytest.raises(ValidationError):
            per_token_ce(model, np.array([0, -1]))


class TestNextTokenAccuracy:
    def test_hand_case(self):
        model = TabularLM(logits=np.array([[1.0, 0.0], [0.0, 1.0]]))
        stream = np.array([0, 0, 1, 1, 0])
        assert next_token_accuracy(model, stream) == 0.5

    def test_blind_to_truncation(self):
        # Top-K keeps the argmax, so accuracy cannot see the dose at all.
        teacher = _flat_teacher([0.5, 0.3, 0.12, 0.08])
        rng = np.random.default_rng(47)
        stream = rng.integers(0, 4, 500)
        reference = next_token_accuracy(teacher, stream)
        for k in (1, 2, 3, "full"):
            student = converged_student(teacher, k, epsilon_q=1e-6)
            assert next_token_accuracy(student, stream) == reference

    def test_validation(self):
        model = _flat_teacher([0.5, 0.5])
        with pytest.raises(ValidationError):
            next_token_accuracy(model, np.array([1]))


class TestChainFidelity:
    def test_perfect_model_scores_one(self):
        _, rows = true_chain(5, 8, 1.1)
        model = TabularLM(logits=np.log(rows))
        assert chain_fidelity(model, rows) == pytest.approx(1.0, abs=1e-9)

    def test_truncation_lowers_fidelity(self, small_world):
        _, rows = true_chain(21, 8, 1.1)
        full = chain_fidelity(converged_student(small_world, "full"), rows)
        cut = chain_fidelity(converged_student(small_world, 2), rows)
        assert cut < full

    def test_validation(self, small_world):
        with pytest.raises(ValidationError):
            chain_fidelity(small_world, np.zeros((4, 4)))


class TestLabConfig:
    def test_k_validation(self):
        with pytest.raises(ValidationError):
            LabConfig(ks=())
        with pytest.raises(ValidationError):
            LabConfig(ks=(0, "full"))
        with pytest.raises(ValidationError):
            LabConfig(ks=(2.5, "full"))
        with pytest.raises(ValidationError):
            LabConfig(ks=(128, "full"))
        with pytest.raises(ValidationError):
            LabConfig(ks=(4, 4, "full"))

    def test_defaults_are_frozen(self):
        config = LabConfig()
        assert (config.vocab, config.seed) == (64, 7)
        assert config.ks == (2, 4, 8, 16, "full")
        with pytest.raises(AttributeError):
            config.vocab = 32


TINY = LabConfig(
    vocab=8, zipf_exponent=1.1, length=10_000, alpha=0.1, ks=(2, "full"),
    steps=300, learning_rate=8.0, eval_length=10_000, epsilon_q=1e-6, seed=3,
)


class TestDoseResponse:
    def test_requires_teacher_anchor(self):
        with pytest.raises(ValidationError, match="full"):
            dose_response(LabConfig(ks=(2, 4)))

    def test_vocab_sized_k_counts_as_full(self):
        dose_response(LabConfig(
            vocab=8, length=10_000, ks=(8,), steps=50, learning_rate=4.0,
            eval_length=10_000, seed=3,
        ))

    def test_structure(self):
        result = dose_response(TINY)
        assert [(r.k, r.source) for r in result.rows] == [
            (2, "trained"), (2, "oracle"), ("full", "trained"), ("full", "oracle")]
        assert set(result.students) == {2, "full"}
        assert set(result.oracles) == {2, "full"}
        assert result.eval_stream.size == TINY.eval_length
        assert result.teacher_summary.count == TINY.eval_length - 1
        for row in result.rows:
            assert math.isfinite(row.median) and row.median > 0
            assert row.mean > 0
        oracle_by_k = {r.k: r for r in result.rows if r.source == "oracle"}
        # The signature effect survives even at this tiny scale.
        assert oracle_by_k[2].median < oracle_by_k["full"].median
        assert oracle_by_k[2].mean > oracle_by_k["full"].mean
