import itertools
import math
import random

import numpy as np
import pytest

from conftest import (
    brute_force_ace,
    brute_force_do_marginal,
    random_boolean_scm,
    sample_world,
)
from docdiag.scm import (
    BooleanScm,
    InconsistentObservationError,
    ace,
    counterfactual,
    counterfactual_search,
    exact_marginal,
    fit,
    impute_with_marginals,
    intervene,
    make_scm,
    sample,
    scm_from_dict,
    scm_to_dict,
    save_scm,
    load_scm,
)


def chain_scm(p_b_given_a=(0.2, 0.9), p_a=0.5):
    """A -> B with p(B=1|A=0), p(B=1|A=1) configurable."""
    return make_scm(
        {"A": (), "B": ("A",)},
        {"A": {(): p_a},
         "B": {(False,): p_b_given_a[0], (True,): p_b_given_a[1]}},
    )


def deterministic_chain():
    """A -> B -> C with B := A and C := B."""
    return make_scm(
        {"A": (), "B": ("A",), "C": ("B",)},
        {"A": {(): 0.5},
         "B": {(False,): 0.0, (True,): 1.0},
         "C": {(False,): 0.0, (True,): 1.0}},
    )


class TestFit:
    def test_single_root_laplace(self):
        scm = fit({"A": ()}, [{"A": True}, {"A": True}, {"A": False}])
        assert scm.root_marginal("A") == pytest.approx((2 + 1) / (3 + 2))

    def test_deterministic_child_converges(self):
        obs = [{"A": v, "B": v} for v in [True] * 40 + [False] * 40]
        scm = fit({"A": (), "B": ("A",)}, obs)
        assert scm.prob("B", (True,)) == pytest.approx(41 / 42)
        assert scm.prob("B", (False,)) == pytest.approx(1 / 42)

    def test_unseen_parent_assignment_falls_back_to_marginal(self):
        obs = [{"A": True, "B": True}] * 3  # A=False never seen
        scm = fit({"A": (), "B": ("A",)}, obs)
        marginal = (3 + 1) / (3 + 2)
        assert scm.prob("B", (False,)) == pytest.approx(marginal)

    def test_node_without_observations_rejected(self):
        with pytest.raises(ValueError, match="no observations"):
            fit({"A": (), "B": ("A",)}, [{"A": True}])

    def test_round_trip_recovers_cpts(self):
        scm = make_scm(
            {"A": (), "B": ("A",), "C": ("A", "B")},
            {"A": {(): 0.6},
             "B": {(False,): 0.3, (True,): 0.7},
             "C": {(False, False): 0.2, (False, True): 0.4,
                   (True, False): 0.5, (True, True): 0.8}},
        )
        worlds = sample(scm, 200_000, seed=7)
        refit = fit({"A": (), "B": ("A",), "C": ("A", "B")},
                    [w.values for w in worlds])
        for v in scm.nodes:
            for pa, p in scm.cpt[v].items():
                assert abs(refit.prob(v, pa) - p) < 0.02, (v, pa)


class TestSample:
    def test_all_ones_under_unit_mechanisms(self):
        scm = make_scm(
            {"A": (), "B": ("A",)},
            {"A": {(): 1.0}, "B": {(False,): 1.0, (True,): 1.0}},
        )
        worlds = sample(scm, 50, seed=1)
        assert all(w.values["A"] and w.values["B"] for w in worlds)

    def test_root_frequency(self):
        scm = chain_scm(p_a=0.5)
        worlds = sample(scm, 100_000, seed=3)
        freq = sum(w.values["A"] for w in worlds) / len(worlds)
        assert abs(freq - 0.5) < 0.01

    def test_seed_determinism(self):
        scm = chain_scm()
        assert sample(scm, 200, seed=9) == sample(scm, 200, seed=9)

    def test_noise_consistent_with_values(self):
        scm = chain_scm()
        for w in sample(scm, 500, seed=5):
            for v in scm.nodes:
                pa = tuple(w.values[p] for p in scm.parents[v])
                assert w.values[v] == (w.noise[v] < scm.prob(v, pa))

    def test_n_zero_rejected(self):
        with pytest.raises(ValueError):
            sample(chain_scm(), 0, seed=0)


class TestIntervene:
    def test_root_becomes_point_mass(self):
        scm = chain_scm()
        out = intervene(scm, {"A": True})
        assert out.root_marginal("A") == 1.0

    def test_mid_node_loses_parents(self):
        scm = deterministic_chain()
        out = intervene(scm, {"B": False})
        assert out.parents["B"] == ()
        assert out.parents["C"] == ("B",)
        assert out.cpt["C"] == scm.cpt["C"]

    def test_empty_intervention_is_identity(self):
        scm = chain_scm()
        assert intervene(scm, {}) == scm

    def test_unknown_node_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            intervene(chain_scm(), {"Z": True})


class TestAce:
    def test_independent_nodes_give_exact_zero(self):
        scm = make_scm(
            {"A": (), "B": ()},
            {"A": {(): 0.3}, "B": {(): 0.7}},
        )
        assert ace(scm, "A", "B", method="exact") == 0.0

    def test_deterministic_copy_gives_one(self):
        scm = make_scm(
            {"A": (), "B": ("A",)},
            {"A": {(): 0.4}, "B": {(False,): 0.0, (True,): 1.0}},
        )
        assert ace(scm, "A", "B", method="exact") == pytest.approx(1.0)

    def test_collider_matches_brute_force(self):
        scm = make_scm(
            {"A": (), "B": (), "C": ("A", "B")},
            {"A": {(): 0.6}, "B": {(): 0.3},
             "C": {(False, False): 0.1, (False, True): 0.5,
                   (True, False): 0.4, (True, True): 0.9}},
        )
        assert ace(scm, "A", "C", "exact") == pytest.approx(
            brute_force_ace(scm, "A", "C"), abs=1e-12)

    def test_random_scms_match_brute_force(self):
        rng = random.Random(123)
        for _ in range(60):
            scm = random_boolean_scm(rng, max_nodes=8)
            x, y = rng.sample(list(scm.nodes), 2)
            assert ace(scm, x, y, "exact") == pytest.approx(
                brute_force_ace(scm, x, y), abs=1e-9)

    def test_non_descendant_target_is_exactly_zero(self):
        rng = random.Random(77)
        checked = 0
        while checked < 25:
            scm = random_boolean_scm(rng, max_nodes=8)
            for x in scm.nodes:
                non_desc = [y for y in scm.nodes
                            if y != x and y not in scm.descendants(x)]
                for y in non_desc[:2]:
                    assert ace(scm, x, y, "exact") == 0.0
                    checked += 1

    def test_monte_carlo_within_three_sigma(self):
        rng = random.Random(2024)
        n = 100_000
        for _ in range(5):
            scm = random_boolean_scm(rng, max_nodes=6)
            x, y = rng.sample(list(scm.nodes), 2)
            exact = ace(scm, x, y, "exact")
            mc = ace(scm, x, y, "monte-carlo", n=n, seed=rng.randrange(2 ** 31))
            sigma = math.sqrt(2.0 / n)  # conservative bound for a mean difference
            assert abs(mc - exact) < 3 * sigma

    def test_x_equals_y_rejected(self):
        with pytest.raises(ValueError):
            ace(chain_scm(), "A", "A")


class TestCounterfactual:
    def test_consistency_axiom(self):
        scm = chain_scm()
        observed = {"A": True, "B": True}
        p = counterfactual(scm, observed, {"A": True, "B": True}, "B")
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_chain_flip(self):
        scm = deterministic_chain()
        observed = {"A": False, "B": False, "C": False}
        assert counterfactual(scm, observed, {"A": True}, "C") == pytest.approx(1.0)

    def test_two_ninths_hand_case(self):
        scm = chain_scm(p_b_given_a=(0.2, 0.9))
        observed = {"A": True, "B": True}
        p = counterfactual(scm, observed, {"A": False}, "B")
        assert p == pytest.approx(2 / 9, abs=1e-12)

    def test_two_ninths_against_numeric_integration(self):
        # posterior of u_B is uniform on [0, 0.9); under do(A=0) the node
        # fires iff u_B < 0.2; integrate on a fine midpoint grid
        k = 900_000
        width = 0.9
        hits = sum(1 for i in range(k) if (i + 0.5) * width / k < 0.2)
        oracle = hits / k
        scm = chain_scm(p_b_given_a=(0.2, 0.9))
        p = counterfactual(scm, {"A": True, "B": True}, {"A": False}, "B")
        assert abs(p - oracle) < 1e-6

    def test_random_consistency(self):
        rng = random.Random(31337)
        for _ in range(300):
            scm = random_boolean_scm(rng, max_nodes=6)
            observed = sample_world(scm, rng)
            subset = [v for v in scm.nodes if rng.random() < 0.5]
            iv = {v: observed[v] for v in subset}
            target = rng.choice(list(scm.nodes))
            p = counterfactual(scm, observed, iv, target)
            expected = 1.0 if observed[target] else 0.0
            assert p == pytest.approx(expected, abs=1e-12)

    def test_matches_rejection_sampling_oracle(self):
        rng = random.Random(99)
        scm = make_scm(
            {"A": (), "B": ("A",), "C": ("A", "B")},
            {"A": {(): 0.5},
             "B": {(False,): 0.3, (True,): 0.8},
             "C": {(False, False): 0.2, (False, True): 0.6,
                   (True, False): 0.4, (True, True): 0.9}},
        )
        observed = {"A": True, "B": False, "C": True}
        iv = {"A": False}
        exact = counterfactual(scm, observed, iv, "C")

        n = 400_000
        gen = np.random.default_rng(4242)
        u = gen.random((n, 3))  # columns A, B, C
        a = u[:, 0] < 0.5
        b = np.where(a, u[:, 1] < 0.8, u[:, 1] < 0.3)
        c_threshold = np.select(
            [a & b, a & ~b, ~a & b],
            [0.9, 0.4, 0.6], default=0.2)
        c = u[:, 2] < c_threshold
        mask = (a == observed["A"]) & (b == observed["B"]) & (c == observed["C"])
        ua, ub, uc = u[mask, 0], u[mask, 1], u[mask, 2]
        a2 = np.zeros(mask.sum(), dtype=bool)  # do(A=False)
        b2 = np.where(a2, ub < 0.8, ub < 0.3)
        c2_threshold = np.select(
            [a2 & b2, a2 & ~b2, ~a2 & b2],
            [0.9, 0.4, 0.6], default=0.2)
        c2 = uc < c2_threshold
        oracle = c2.mean()
        sigma = math.sqrt(0.25 / mask.sum())
        assert abs(exact - oracle) < 4 * sigma

    def test_incomplete_observation_rejected(self):
        with pytest.raises(ValueError, match="incomplete"):
            counterfactual(chain_scm(), {"A": True}, {}, "B")

    def test_inconsistent_observation_rejected(self):
        scm = deterministic_chain()
        with pytest.raises(InconsistentObservationError):
            counterfactual(scm, {"A": False, "B": True, "C": True}, {}, "C")

    def test_clamping_rescues_degenerate_mechanisms(self):
        scm = deterministic_chain()
        p = counterfactual(scm, {"A": False, "B": True, "C": True}, {},
                           "C", clamp_eps=1e-9)
        assert 0.0 <= p <= 1.0

    def test_majority_fill_helper(self):
        scm = chain_scm(p_a=0.9)
        filled = impute_with_marginals(scm, {"B": False})
        assert filled == {"A": True, "B": False}


class TestCounterfactualSearch:
    def test_empty_candidates_yield_factual(self):
        scm = chain_scm()
        observed = {"A": True, "B": True}
        result = counterfactual_search(scm, observed, [], "B")
        assert len(result.entries) == 1
        assert result.entries[0].p_target_true == pytest.approx(1.0)

    def test_five_candidates_give_32_entries(self):
        rng = random.Random(5)
        scm = random_boolean_scm(rng, max_nodes=7)
        while len(scm.nodes) < 6:
            scm = random_boolean_scm(rng, max_nodes=7)
        observed = sample_world(scm, rng)
        target = scm.nodes[-1]
        candidates = [v for v in scm.nodes if v != target][:5]
        result = counterfactual_search(scm, observed, candidates, target)
        assert len(result.entries) == 32

    def test_chain_flip_identified(self):
        scm = deterministic_chain()
        observed = {"A": False, "B": False, "C": False}
        result = counterfactual_search(scm, observed, ["A"], "C",
                                       flip_threshold=0.5)
        assert len(result.flips) == 1
        assert result.flips[0].interventions == {"A": True}

    def test_candidate_bound_enforced(self):
        scm = chain_scm()
        with pytest.raises(ValueError, match="bound"):
            counterfactual_search(scm, {"A": True, "B": True},
                                  ["A"] * 13, "B")


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = random.Random(8)
        scm = random_boolean_scm(rng)
        again = scm_from_dict(scm_to_dict(scm))
        assert again == scm
        path = tmp_path / "model.json"
        save_scm(scm, path)
        assert load_scm(path) == scm
