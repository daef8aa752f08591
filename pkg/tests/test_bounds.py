import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modsorg.aggregation import Partition, aggregate_parameters, split_macro
from modsorg.bounds import (AS_WRITTEN, CONSERVATIVE, approximation_error_bound, bound_constant, error_map,
                            error_policy, error_report, influence, influence_map,
                            interpolation_error_bound, module_task_error, refinement_scores, reward_spread)
from modsorg.mdp import FiniteMdp, random_mdp

from cases import influence_vs_finite_difference, random_instance, soundness_gaps
from oracles import average_parameters, error_fixed_point, interpolation_bound


def pair_spread(T, group, targets):
    """Conservative transition max-pair term of ``group`` against fixed target groups."""
    n_a = T.shape[1]
    return sum(max(abs(T[s, a, list(h)].sum() - T[t, a, list(h)].sum())
                   for a in range(n_a) for s in group for t in group) for h in targets)


def model_from_dense(T_hat, R_hat, gamma):
    """Aggregate model whose macro MDP is exactly (T_hat, R_hat)."""
    mdp = FiniteMdp.from_dense(T_hat, R_hat, gamma)
    return aggregate_parameters(mdp, Partition.singletons(T_hat.shape[0]))


class TestInterpolationBound:
    @pytest.mark.parametrize("variant", [AS_WRITTEN, CONSERVATIVE])
    def test_singletons_zero(self, variant):
        mdp = random_mdp(6, 2, 0.9, seed=2)
        e = interpolation_error_bound(mdp, aggregate_parameters(mdp, Partition.singletons(6)), variant)
        assert np.all(e == 0)

    def test_identical_members_zero(self):
        T = np.zeros((2, 1, 2))
        T[:, 0, 0] = 1.0
        mdp = FiniteMdp.from_dense(T, np.full((2, 1), 0.3), 0.9)
        assert interpolation_error_bound(mdp, aggregate_parameters(mdp, Partition.blank(2))).tolist() == [0.0]

    def test_reward_difference(self):
        T = np.full((2, 1, 2), 0.5)
        mdp = FiniteMdp.from_dense(T, np.array([[0.0], [1.0]]), 0.9)
        model = aggregate_parameters(mdp, Partition.blank(2))
        assert interpolation_error_bound(mdp, model, CONSERVATIVE).tolist() == [1.0]
        assert interpolation_error_bound(mdp, model, AS_WRITTEN).tolist() == [0.5]

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("variant", [AS_WRITTEN, CONSERVATIVE])
    def test_matches_pair_loops(self, seed, variant):
        mdp, p = random_instance(seed, max_states=10)
        groups = [m.tolist() for m in p.members]
        expected = interpolation_bound(mdp.dense(), mdp.rewards, mdp.discount, groups, variant == CONSERVATIVE)
        got = interpolation_error_bound(mdp, aggregate_parameters(mdp, p), variant)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_bound_constant(self):
        mdp = FiniteMdp.from_dense(np.ones((1, 2, 1)), np.array([[0.5, -2.0]]), 0.75)
        assert bound_constant(mdp) == pytest.approx(0.75 * 2.0 / 0.25)

    def test_unknown_variant(self):
        mdp = random_mdp(2, 1, 0.5, seed=0)
        with pytest.raises(ValueError):
            interpolation_error_bound(mdp, aggregate_parameters(mdp, Partition.blank(2)), "loose")

    @pytest.mark.parametrize("seed", range(20))
    def test_children_spreads_within_parent(self, seed):
        mdp, p = random_instance(seed, max_states=12)
        big = [j for j, m in enumerate(p.members) if m.size >= 2]
        if not big:
            p, big = Partition.blank(mdp.n_states), [0]
        j = big[0]
        q = split_macro(p, j)
        T = mdp.dense()
        targets = [m.tolist() for m in p.members]
        parent_dr = reward_spread(mdp, p)[j]
        parent_dt = pair_spread(T, p.members[j].tolist(), targets)
        for child in (j, q.n_macros - 1):
            assert reward_spread(mdp, q)[child] <= parent_dr + 1e-15
            assert pair_spread(T, q.members[child].tolist(), targets) <= parent_dt + 1e-15


class TestApproximationBound:
    def test_zero_discount(self):
        mdp = random_mdp(6, 2, 0.0, seed=1)
        model = aggregate_parameters(mdp, Partition.from_groups([[0, 1, 2], [3, 4, 5]]))
        e = np.array([0.3, 1.7])
        np.testing.assert_array_equal(approximation_error_bound(model, e), e)

    def test_self_loop(self):
        model = model_from_dense(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.8)
        assert approximation_error_bound(model, np.array([2.0]), 1e-10) == pytest.approx([10.0], abs=1e-9)

    def test_three_macro_chain(self):
        T = np.zeros((3, 2, 3))
        T[0, 0, 1] = T[1, 0, 2] = T[2, 0, 2] = 1.0
        T[0, 1, 0] = T[1, 1, 1] = T[2, 1, 2] = 1.0
        e_int = np.array([1.0, 0.0, 0.0])
        model = model_from_dense(T, np.zeros((3, 2)), 0.9)
        expected = error_fixed_point(T, 0.9, e_int)
        np.testing.assert_allclose(approximation_error_bound(model, e_int, 1e-10), expected, atol=1e-8)
        assert expected[0] == pytest.approx(10.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_against_brute_force(self, seed):
        mdp, p = random_instance(seed, max_states=10)
        groups = [m.tolist() for m in p.members]
        _, T_hat = average_parameters(mdp.dense(), mdp.rewards, groups)
        model = aggregate_parameters(mdp, p)
        e_int = interpolation_error_bound(mdp, model, CONSERVATIVE)
        expected = error_fixed_point(T_hat, mdp.discount, e_int)
        np.testing.assert_allclose(approximation_error_bound(model, e_int, 1e-11), expected, atol=1e-8)

    def test_negative_input_rejected(self):
        model = model_from_dense(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.8)
        with pytest.raises(ValueError):
            approximation_error_bound(model, np.array([-1.0]))

    @pytest.mark.parametrize("seed", range(10))
    def test_dominates_interpolation_bound(self, seed):
        mdp, p = random_instance(seed)
        report = error_report(mdp, p, CONSERVATIVE)
        assert np.all(report.e_app_bar >= report.e_int_bar - 1e-12)
        assert np.all(np.isfinite(report.influence)) and np.all(report.influence >= 0)


@pytest.mark.parametrize("seed", range(50))
def test_conservative_bound_is_sound(seed):
    mdp, p = random_instance(seed)
    assert soundness_gaps(mdp, p).max() <= 1e-6


def test_as_written_bound_can_underestimate():
    # the 1/|macro| factor makes the bound too small on some instances
    worst = max(soundness_gaps_as_written(seed) for seed in range(30))
    assert worst > 1e-6


def soundness_gaps_as_written(seed):
    from modsorg.aggregation import approximate_solve, lift
    from modsorg.mdp import value_iteration

    mdp, p = random_instance(seed)
    v_star, _ = value_iteration(mdp, 1e-10)
    model = aggregate_parameters(mdp, p)
    gap = np.abs(v_star - lift(approximate_solve(model, 1e-10), p))
    e_app = approximation_error_bound(model, interpolation_error_bound(mdp, model, AS_WRITTEN), 1e-10)
    return max(gap[m].max() - e_app[j] for j, m in enumerate(p.members))


class TestErrorPolicy:
    def test_uniform_errors_tie(self):
        model = model_from_dense(np.full((3, 2, 3), 1 / 3), np.zeros((3, 2)), 0.9)
        assert error_policy(model, np.ones(3)).tolist() == [0, 0, 0]

    def test_moves_towards_larger_error(self):
        T = np.zeros((2, 2, 2))
        T[0, 0, 0] = T[1, 0, 1] = 1.0
        T[:, 1, 1] = 1.0
        model = model_from_dense(T, np.zeros((2, 2)), 0.9)
        assert error_policy(model, np.array([1.0, 5.0])).tolist() == [1, 0]

    def test_direct_argmax(self):
        mdp = random_mdp(8, 3, 0.9, seed=11)
        model = aggregate_parameters(mdp, Partition.from_groups([[0, 1], [2, 3], [4, 5], [6, 7]]))
        e_app = np.random.default_rng(11).random(4)
        T_hat = model.macro_mdp.dense()
        expected = [int(np.argmax([T_hat[m, a] @ e_app for a in range(3)])) for m in range(4)]
        assert error_policy(model, e_app).tolist() == expected


class TestInfluence:
    def test_zero_discount(self):
        mdp = random_mdp(4, 2, 0.0, seed=0)
        model = aggregate_parameters(mdp, Partition.from_groups([[0], [1, 2], [3]]))
        mask = np.array([True, False, True])
        assert influence(model, mask, np.zeros(3, dtype=int)).tolist() == [1.0, 0.0, 1.0]

    def test_self_loop(self):
        model = model_from_dense(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.9)
        assert influence(model, [True], [0], 1e-10) == pytest.approx([10.0], abs=1e-8)

    def test_finite_difference_seed_11(self):
        mdp = random_mdp(8, 3, 0.9, seed=11)
        p = Partition.from_groups([[0, 1], [2, 3], [4, 5], [6, 7]])
        infl, fd = influence_vs_finite_difference(mdp, p)
        np.testing.assert_allclose(infl, fd, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("variant", [AS_WRITTEN, CONSERVATIVE])
    def test_finite_difference_random(self, seed, variant):
        mdp, p = random_instance(seed)
        infl, fd = influence_vs_finite_difference(mdp, p, variant)
        np.testing.assert_allclose(infl, fd, rtol=1e-6)

    def test_not_a_sup_norm_contraction(self):
        # column sums of the transition matrix can exceed one: two macros both feed macro 0
        T = np.zeros((2, 1, 2))
        T[:, 0, 0] = 1.0
        model = model_from_dense(T, np.zeros((2, 1)), 0.9)
        f, g = np.array([1.0, 1.0]), np.zeros(2)
        lhs = np.abs(influence_map(model, [True, True], [0, 0], f) - influence_map(model, [True, True], [0, 0], g))
        assert lhs.max() > 0.9 * np.abs(f - g).max()
        assert lhs.sum() <= 0.9 * np.abs(f - g).sum() + 1e-12


def test_refinement_scores():
    assert refinement_scores([1, 2], [3, 0.5]).tolist() == [3.0, 1.0]
    assert refinement_scores(np.zeros(3), np.ones(3)).tolist() == [0.0, 0.0, 0.0]


def test_scores_vanish_outside_start_region():
    mdp = random_mdp(4, 2, 0.0, seed=3)
    model = aggregate_parameters(mdp, Partition.from_groups([[0, 1], [2, 3]]))
    infl = influence(model, [True, False], [0, 0])
    assert refinement_scores([0.7, 0.9], infl).tolist() == [0.7, 0.0]


class TestModuleTaskError:
    def test_singletons(self):
        mdp = random_mdp(6, 2, 0.9, seed=8)
        assert module_task_error(mdp, Partition.singletons(6), tol=1e-6) <= 2e-6

    def test_zero_discount_uniform_rewards(self):
        T = np.random.default_rng(0).dirichlet(np.ones(4), size=(4, 2))
        mdp = FiniteMdp.from_dense(T, np.full((4, 2), 0.5), 0.0)
        assert module_task_error(mdp, Partition.blank(4)) == 0.0

    @pytest.mark.parametrize("variant", [AS_WRITTEN, CONSERVATIVE])
    def test_composition_oracle(self, variant):
        mdp = random_mdp(4, 2, 0.9, seed=3)
        groups = [[0, 1], [2, 3]]
        _, T_hat = average_parameters(mdp.dense(), mdp.rewards, groups)
        e_int = interpolation_bound(mdp.dense(), mdp.rewards, 0.9, groups, variant == CONSERVATIVE)
        e_app = error_fixed_point(T_hat, 0.9, e_int)
        expected = (2 * e_app[0] + 2 * e_app[1]) / 4
        got = module_task_error(mdp, Partition.from_groups(groups), variant, 1e-11)
        assert got == pytest.approx(expected, abs=1e-8)


def test_report_csv(tmp_path):
    mdp = random_mdp(6, 2, 0.9, seed=1)
    report = error_report(mdp, Partition.from_groups([[0, 1, 2], [3, 4, 5]]))
    report.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "macro,e_int_bar,e_app_bar,influence,score"
    assert len(lines) == 3


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_error_map_contracts_and_is_monotone(seed):
    mdp, p = random_instance(seed)
    model = aggregate_parameters(mdp, p)
    rng = np.random.default_rng(seed)
    e = rng.random(p.n_macros)
    f, g = rng.normal(scale=5, size=(2, p.n_macros))
    gamma = mdp.discount
    assert np.abs(error_map(model, e, f) - error_map(model, e, g)).max() <= gamma * np.abs(f - g).max() + 1e-12
    h = f + rng.random(p.n_macros)
    assert np.all(error_map(model, e, f) <= error_map(model, e, h) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_influence_map_contracts_in_l1_and_is_monotone(seed):
    mdp, p = random_instance(seed)
    model = aggregate_parameters(mdp, p)
    rng = np.random.default_rng(seed)
    pi = rng.integers(mdp.n_actions, size=p.n_macros)
    mask = rng.random(p.n_macros) < 0.5
    f, g = rng.normal(scale=5, size=(2, p.n_macros))
    d = influence_map(model, mask, pi, f) - influence_map(model, mask, pi, g)
    assert np.abs(d).sum() <= mdp.discount * np.abs(f - g).sum() + 1e-12
    h = f + rng.random(p.n_macros)
    assert np.all(influence_map(model, mask, pi, f) <= influence_map(model, mask, pi, h) + 1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_error_bound_monotone_in_interpolation_error(seed):
    mdp, p = random_instance(seed)
    model = aggregate_parameters(mdp, p)
    rng = np.random.default_rng(seed)
    e = rng.random(p.n_macros)
    bumped = e.copy()
    bumped[rng.integers(p.n_macros)] += rng.random()
    lo = approximation_error_bound(model, e, 1e-10)
    hi = approximation_error_bound(model, bumped, 1e-10)
    assert np.all(hi >= lo - 1e-9)
