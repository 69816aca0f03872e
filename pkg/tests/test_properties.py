import numpy as np
from hypothesis import given, settings, strategies as st

from checks import (MONOTONE_CHANNELS, gradient_error, markov_order_bounds, midpoint_violation,
                    random_instance, random_pair, ub_lb_pairs)

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_gradient_matches_central_differences(seed):
    ch, _, _, d = random_instance(np.random.default_rng(seed))
    assert gradient_error(ch, d) <= 1e-5


@settings(max_examples=1000, deadline=None)
@given(seeds)
def test_objective_is_midpoint_convex(seed):
    ch, d1, d2 = random_pair(np.random.default_rng(seed))
    assert midpoint_violation(ch, d1, d2) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_upper_bound_dominates_certified_lower_bound(seed):
    for ub, lb, label in ub_lb_pairs(5, seed=seed):
        assert ub >= lb - 1e-9, label


def test_upper_bound_monotone_in_markov_order():
    for family, p in MONOTONE_CHANNELS:
        values = markov_order_bounds(family, p)
        assert all(a >= b - 1e-8 for a, b in zip(values, values[1:])), (family, values)
