import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqcmp import _kernels
from vqcmp.assembler import InterleaveFormat
from vqcmp.prefagg import (
    TWO_AFC_QUERY,
    Choice,
    ChoiceRecord,
    ConvergenceError,
    PrefError,
    PreferenceMatrix,
    fit_map_scores,
    log_posterior,
    map_choice_text,
    pearson,
    run_2afc,
    swap_consistency,
    weighted_average,
)

from conftest import ScriptedClient, make_refs


# -- independent grid-search oracle (kept free of the fitter's code paths) --


def oracle_log_posterior(points: np.ndarray, c, t, prior_variance: float) -> np.ndarray:
    """Objective evaluated directly from its definition, vectorized over rows."""
    points = np.atleast_2d(points)
    n = len(c)
    total = -np.sum(points**2, axis=1) / (2.0 * prior_variance)

    def logsig(x):
        return -np.logaddexp(0.0, -x)

    for i in range(n):
        for j in range(n):
            if i != j and c[i][j]:
                total = total + c[i][j] * logsig(points[:, i] - points[:, j])
    for i in range(n):
        for j in range(i + 1, n):
            if t[i][j]:
                d = points[:, i] - points[:, j]
                total = total + t[i][j] * (logsig(d) + logsig(-d))
    return total


def grid_argmax(c, t, prior_variance, lo=-5.0, hi=5.0, points=21, rounds=12):
    """Coarse-to-fine grid search, refined well past 1e-3 per coordinate."""
    n = len(c)
    lows = np.full(n, lo)
    highs = np.full(n, hi)
    best = np.zeros(n)
    for _ in range(rounds):
        axes = [np.linspace(lows[k], highs[k], points) for k in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        values = oracle_log_posterior(flat, c, t, prior_variance)
        best = flat[int(np.argmax(values))]
        span = (highs - lows) / (points - 1)
        lows = best - 2.0 * span
        highs = best + 2.0 * span
        if span.max() < 1e-5:
            break
    return best


# 3-item chain: 9 wins vs 1 in every adjacent-and-skip matchup, prior variance 10.
CHAIN_C = [[0, 9, 9], [1, 0, 9], [1, 1, 0]]
ZERO_T3 = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
# frozen output of grid_argmax(CHAIN_C, ZERO_T3, 10.0), cross-checked with BFGS
CHAIN_ORACLE = np.array([1.561434, 0.000000, -1.561434])

# same instance with c[0][1] boosted 9 -> 12
BOOST_C = [[0, 12, 9], [1, 0, 9], [1, 1, 0]]
BOOST_ORACLE = np.array([1.711654, -0.101894, -1.609766])

# 2-item instance with ties: c01=5, c10=1, t=4
TIE_ORACLE = np.array([0.289397, -0.289397])


def matrix(c, t=None, items=None):
    c = np.asarray(c, dtype=np.int64)
    n = c.shape[0]
    t = np.zeros_like(c) if t is None else np.asarray(t, dtype=np.int64)
    items = tuple(items or (f"item{k}" for k in range(n)))
    return PreferenceMatrix(items=items, c=c, t=t)


class TestMapFit:
    def test_grid_oracle_is_reproducible(self):
        fresh = grid_argmax(CHAIN_C, ZERO_T3, 10.0)
        np.testing.assert_allclose(fresh, CHAIN_ORACLE, atol=1e-3)

    def test_chain_instance_matches_grid_oracle(self):
        scores = fit_map_scores(matrix(CHAIN_C), prior_variance=10.0)
        np.testing.assert_allclose(scores.scores, CHAIN_ORACLE, atol=1e-3)

    def test_gradient_at_solution_vanishes_and_matches_finite_differences(self):
        m = matrix(CHAIN_C)
        scores = fit_map_scores(m, prior_variance=10.0, tol=1e-8)
        a = (m.c + m.t).astype(np.float64)
        _, grad = _kernels.logpost_grad(scores.scores, a, 0.1)
        assert np.max(np.abs(grad)) < 1e-8
        h = 1e-5
        fd = np.zeros(3)
        for k in range(3):
            up, down = scores.scores.copy(), scores.scores.copy()
            up[k] += h
            down[k] -= h
            fd[k] = (
                oracle_log_posterior(up, CHAIN_C, ZERO_T3, 10.0)[0]
                - oracle_log_posterior(down, CHAIN_C, ZERO_T3, 10.0)[0]
            ) / (2 * h)
        np.testing.assert_allclose(fd, grad, rtol=1e-4, atol=1e-6)

    def test_gradient_matches_finite_differences_off_optimum(self):
        point = np.array([0.7, -0.3, 0.1])
        a = np.asarray(CHAIN_C, dtype=np.float64)
        _, grad = _kernels.logpost_grad(point, a, 0.1)
        h = 1e-6
        fd = np.zeros(3)
        for k in range(3):
            up, down = point.copy(), point.copy()
            up[k] += h
            down[k] -= h
            fd[k] = (
                oracle_log_posterior(up, CHAIN_C, ZERO_T3, 10.0)[0]
                - oracle_log_posterior(down, CHAIN_C, ZERO_T3, 10.0)[0]
            ) / (2 * h)
        np.testing.assert_allclose(fd, grad, rtol=1e-4)

    def test_symmetric_counts_return_zero_vector(self):
        c = [[0, 5, 5], [5, 0, 5], [5, 5, 0]]
        scores = fit_map_scores(matrix(c), prior_variance=10.0, tol=1e-10)
        np.testing.assert_allclose(scores.scores, 0.0, atol=1e-10)

    def test_zero_comparisons_return_prior_mode(self):
        scores = fit_map_scores(matrix(np.zeros((4, 4), dtype=int)))
        np.testing.assert_allclose(scores.scores, 0.0)

    def test_tie_instance_matches_grid_oracle(self):
        m = matrix([[0, 5], [1, 0]], t=[[0, 4], [4, 0]])
        scores = fit_map_scores(m, prior_variance=10.0)
        np.testing.assert_allclose(scores.scores, TIE_ORACLE, atol=1e-3)

    def test_translation_invariance_without_prior(self):
        m = matrix(CHAIN_C)
        s = np.array([0.4, -0.7, 1.1])
        base = log_posterior(s, m, prior_variance=None)
        shifted = log_posterior(s + 3.21, m, prior_variance=None)
        assert shifted == pytest.approx(base, abs=1e-9)
        # the prior breaks the degeneracy
        assert log_posterior(s + 3.21, m, prior_variance=10.0) < log_posterior(
            s, m, prior_variance=10.0
        )

    def test_prior_pins_weighted_mean_near_zero(self):
        tol = 1e-8
        scores = fit_map_scores(matrix(CHAIN_C), prior_variance=10.0, tol=tol)
        assert abs(scores.scores.sum()) <= tol * 3 * 10.0

    def test_order_equivariance(self):
        m = matrix(CHAIN_C, items=("a", "b", "c"))
        perm = [2, 0, 1]
        c = np.asarray(CHAIN_C)[np.ix_(perm, perm)]
        m_perm = matrix(c, items=("c", "a", "b"))
        direct = fit_map_scores(m).as_dict()
        permuted = fit_map_scores(m_perm).as_dict()
        for key in ("a", "b", "c"):
            assert permuted[key] == pytest.approx(direct[key], abs=1e-9)

    def test_monotonicity_in_win_counts(self):
        base = fit_map_scores(matrix(CHAIN_C)).scores
        boosted = fit_map_scores(matrix(BOOST_C)).scores
        np.testing.assert_allclose(boosted, BOOST_ORACLE, atol=1e-3)
        assert (boosted[0] - boosted[1]) > (base[0] - base[1])

    def test_nonconvergence_carries_last_iterate(self):
        with pytest.raises(ConvergenceError) as err:
            fit_map_scores(matrix(CHAIN_C), max_iter=1, tol=1e-12)
        assert err.value.last_scores.shape == (3,)

    def test_invalid_prior_variance(self):
        with pytest.raises(PrefError):
            fit_map_scores(matrix(CHAIN_C), prior_variance=0.0)

    def test_matrix_invariants(self):
        with pytest.raises(PrefError):
            matrix([[1, 0], [0, 0]])  # non-zero diagonal
        with pytest.raises(PrefError):
            PreferenceMatrix(
                items=("a", "b"),
                c=np.zeros((2, 2), dtype=int),
                t=np.array([[0, 1], [2, 0]]),
            )

    @settings(max_examples=20, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        n=st.integers(min_value=2, max_value=6),
    )
    def test_numpy_and_active_kernels_agree(self, seed, n):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 12, size=(n, n)).astype(np.float64)
        np.fill_diagonal(a, 0.0)
        s = rng.normal(size=n)
        np_lp, np_hess = _kernels.numpy_kernels()
        v1, g1 = _kernels.logpost_grad(s, a, 0.1)
        v2, g2 = np_lp(s, a, 0.1)
        assert v1 == pytest.approx(v2, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(
            _kernels.hessian(s, a, 0.1), np_hess(s, a, 0.1), rtol=1e-12, atol=1e-12
        )


class TestChoiceMapping:
    def test_first_second_tie_keywords(self):
        assert map_choice_text("The first image, clearly.") == (Choice.FIRST, False)
        assert map_choice_text("I prefer the second image") == (Choice.SECOND, False)
        assert map_choice_text("two images have similar quality") == (Choice.TIE, False)

    def test_unmapped_is_flagged_tie(self):
        assert map_choice_text("no idea") == (Choice.TIE, True)

    def test_earliest_mention_wins(self):
        assert map_choice_text("second, not first")[0] is Choice.SECOND


class TestRun2AFC:
    def pairs(self, n):
        refs = make_refs(2 * n, prefix="afc")
        return [(refs[2 * k], refs[2 * k + 1]) for k in range(n)]

    def test_pinned_question(self, goldens):
        assert TWO_AFC_QUERY == goldens["two_afc_query"]

    def test_two_records_per_pair_in_both_orders(self):
        client = ScriptedClient(reply="the first image")
        records = run_2afc(client, self.pairs(10))
        assert len(records) == 20
        for k in range(10):
            assert records[2 * k].pair == (records[2 * k + 1].pair[1], records[2 * k + 1].pair[0])
        assert all(r.choice is Choice.FIRST for r in records)

    def test_similar_quality_maps_to_tie(self):
        client = ScriptedClient(reply="the two images have similar quality")
        records = run_2afc(client, self.pairs(2))
        assert all(r.choice is Choice.TIE and not r.flagged for r in records)

    def test_client_failure_becomes_flagged_tie(self):
        client = ScriptedClient(fail_always=True)
        records = run_2afc(client, self.pairs(1), sleep=lambda _: None)
        assert all(r.choice is Choice.TIE and r.flagged for r in records)


class TestSwapConsistency:
    def rec(self, a, b, choice):
        return ChoiceRecord(pair=(a, b), choice=choice)

    def test_fully_consistent(self):
        records = [
            self.rec("a", "b", Choice.FIRST),
            self.rec("b", "a", Choice.SECOND),
            self.rec("c", "d", Choice.SECOND),
            self.rec("d", "c", Choice.FIRST),
        ]
        out = swap_consistency(records)
        assert out.raw == 1.0
        assert out.chance_corrected == 1.0

    def test_always_position_one_gives_zero(self):
        client = ScriptedClient(reply="the first image")
        refs = make_refs(8, prefix="s")
        pairs = [(refs[2 * k], refs[2 * k + 1]) for k in range(4)]
        records = run_2afc(client, pairs)
        out = swap_consistency(records)
        assert out.raw == 0.0
        assert out.chance_corrected == 0.0

    def test_hand_built_four_pair_table(self):
        records = [
            self.rec("a", "b", Choice.FIRST), self.rec("b", "a", Choice.SECOND),  # consistent (a)
            self.rec("c", "d", Choice.SECOND), self.rec("d", "c", Choice.FIRST),  # consistent (d)
            self.rec("e", "f", Choice.TIE), self.rec("f", "e", Choice.TIE),       # consistent (tie)
            self.rec("g", "h", Choice.FIRST), self.rec("h", "g", Choice.FIRST),   # inconsistent
        ]
        out = swap_consistency(records)
        assert out.raw == pytest.approx(0.75)
        # marginals: first 4/8, second 2/8, tie 2/8 -> p_e = 2*.5*.25 + .25^2 = 0.3125
        assert out.chance_corrected == pytest.approx((0.75 - 0.3125) / (1 - 0.3125))
        assert out.chance_corrected == pytest.approx(7 / 11)

    def test_storage_order_within_pair_is_irrelevant(self):
        records = [
            self.rec("a", "b", Choice.FIRST), self.rec("b", "a", Choice.SECOND),
            self.rec("g", "h", Choice.FIRST), self.rec("h", "g", Choice.FIRST),
        ]
        swapped = [records[1], records[0], records[3], records[2]]
        assert swap_consistency(records).raw == swap_consistency(swapped).raw

    def test_odd_count_rejected(self):
        with pytest.raises(PrefError):
            swap_consistency([self.rec("a", "b", Choice.FIRST)])

    def test_mismatched_pairs_rejected(self):
        with pytest.raises(PrefError, match="not order-swapped"):
            swap_consistency(
                [self.rec("a", "b", Choice.FIRST), self.rec("a", "b", Choice.FIRST)]
            )


class TestMatrixFromRecords:
    def test_wins_and_ties_counted(self):
        records = [
            ChoiceRecord(pair=("a", "b"), choice=Choice.FIRST),
            ChoiceRecord(pair=("b", "a"), choice=Choice.SECOND),
            ChoiceRecord(pair=("a", "c"), choice=Choice.TIE),
        ]
        m = PreferenceMatrix.from_records(records, items=("a", "b", "c"))
        assert m.c[0, 1] == 2  # a beat b in both presentations
        assert m.c[1, 0] == 0
        assert m.t[0, 2] == m.t[2, 0] == 1


class TestPearson:
    def test_affine_is_one(self):
        x = np.linspace(0, 5, 20)
        assert pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-12)

    def test_negation_is_minus_one(self):
        x = np.array([0.3, 1.0, -2.0, 4.0])
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_computed_value(self):
        # x=(1,2,4), y=(2,1,5): r = 16 / sqrt(364)
        assert pearson([1, 2, 4], [2, 1, 5]) == pytest.approx(16 / np.sqrt(364), abs=1e-9)

    def test_constant_vector_rejected(self):
        with pytest.raises(PrefError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_short_or_mismatched_rejected(self):
        with pytest.raises(PrefError):
            pearson([1], [2])
        with pytest.raises(PrefError):
            pearson([1, 2], [1, 2, 3])


class TestWeightedAverage:
    def test_equal_weights_is_mean(self):
        values = {"a": 0.2, "b": 0.8}
        assert weighted_average(values, {"a": 5, "b": 5}) == pytest.approx(0.5)

    def test_pair_count_weighting(self):
        values = {"a": 0.8, "b": 0.6}
        weights = {"a": 100, "b": 300}
        assert weighted_average(values, weights) == pytest.approx(0.65)

    def test_single_dataset_is_identity(self):
        assert weighted_average({"only": 0.42}, {"only": 17}) == pytest.approx(0.42)

    def test_empty_rejected(self):
        with pytest.raises(PrefError):
            weighted_average({}, {})

    def test_key_mismatch_rejected(self):
        with pytest.raises(PrefError):
            weighted_average({"a": 1.0}, {"b": 1.0})
