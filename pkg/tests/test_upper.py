import numpy as np
import pytest

from fscbounds.channels import make_builtin
from fscbounds.encoders import GRAPHS
from fscbounds.markov import joint_distribution, transition_and_stationary
from fscbounds.qgraph import QGraph, couple, markov_qgraph
from fscbounds.upper import (InvalidGraphError, ReducedProblem, SolverError, build_constraints,
                             extract_policy, objective_and_gradient, solve_ub)

from oracles import directed_information_rate, golden_log, h2


def stationary_joint(ch, g, table):
    st = transition_and_stationary(couple(ch, g), table)
    return joint_distribution(ch.kernel, table, st.pi)


@pytest.mark.parametrize("p", [0.05, 0.2, 0.35, 0.5])
def test_bfc1_single_node(p):
    res = solve_ub(make_builtin("bfc1", p), markov_qgraph(0))
    assert res.value == pytest.approx(1 - h2(p), abs=1e-6)
    assert res.kind == "upper"
    assert res.feasibility_residual < 1e-8
    assert res.certified_value >= res.value


def test_trapdoor_three_node_graph_at_half():
    g = QGraph(GRAPHS["trapdoor_3node"])
    res = solve_ub(make_builtin("trapdoor", 0.5), g)
    assert res.value == pytest.approx(golden_log(), abs=1e-6)


@pytest.mark.parametrize("family,p,k", [("trapdoor", 0.3, 1), ("ising", 0.6, 2),
                                        ("bfc2", 0.3, 1)])
def test_bound_dominates_random_policies(family, p, k):
    ch, g = make_builtin(family, p), markov_qgraph(k)
    ub = solve_ub(ch, g).certified_value
    rng = np.random.default_rng(2)
    for _ in range(20):
        table = rng.dirichlet(np.ones(2), size=(2, g.node_count))
        rate = directed_information_rate(ch.kernel, ch.next_state, g.transition, table)
        assert rate <= ub + 1e-9


def test_stationary_joint_satisfies_constraints():
    ch, g = make_builtin("ising", 0.7), markov_qgraph(2)
    d = stationary_joint(ch, g, np.random.default_rng(0).dirichlet([1, 1], size=(2, 4)))
    sys_ = build_constraints(ch, g)
    assert sys_.residual(d) < 1e-12
    assert len(sys_.rows("pmf")) == 1
    assert len(sys_.rows("stationary")) == 2 * 4
    assert sys_.variable_count == 2 * 4 * 2 * 2


def test_objective_is_negative_information():
    ch, g = make_builtin("trapdoor", 0.4), markov_qgraph(1)
    table = np.random.default_rng(4).dirichlet([1, 1], size=(2, 2))
    d = stationary_joint(ch, g, table)
    f0, grad = objective_and_gradient(d, ch)
    ref = directed_information_rate(ch.kernel, ch.next_state, g.transition, table)
    assert -f0 == pytest.approx(ref, abs=1e-10)
    assert grad.shape == d.shape


def test_reduced_gradient_and_hessian_match_differences():
    prob = ReducedProblem(make_builtin("ising", 0.65), markov_qgraph(1))
    u = prob.interior_point(np.random.default_rng(8))
    v = prob.null @ np.random.default_rng(9).normal(size=prob.null.shape[1])
    h = 1e-6
    fd = (prob.info(u + h * v) - prob.info(u - h * v)) / (2 * h)
    assert fd == pytest.approx(prob.gradient(u) @ v, rel=1e-6)
    fd2 = (prob.gradient(u + h * v) - prob.gradient(u - h * v)) / (2 * h)
    assert np.allclose(fd2, prob.hessian(u) @ v, atol=1e-5)


def test_invalid_graph_rejected():
    with pytest.raises(InvalidGraphError):
        solve_ub(make_builtin("trapdoor", 0.0), markov_qgraph(0))


def test_iteration_cap_reports_partial_result():
    with pytest.raises(SolverError) as info:
        solve_ub(make_builtin("ising", 0.7), markov_qgraph(3), obj_tol=1e-14, max_iter=2)
    assert info.value.result is not None
    assert info.value.result.status == "iteration_cap"


def test_extract_policy_round_trip():
    ch, g = make_builtin("bfc2", 0.3), markov_qgraph(1)
    table = np.random.default_rng(6).dirichlet([1, 1], size=(2, 2))
    d = stationary_joint(ch, g, table)
    pol, pi = extract_policy(d)
    assert np.allclose(pol.table[~pol.defaulted], table[~pol.defaulted], atol=1e-12)
    assert pi.sum() == pytest.approx(1.0)


def test_zero_mass_rows_are_flagged():
    d = np.zeros((2, 1, 2, 2))
    d[0, 0, 0, 0] = 1.0
    pol, _ = extract_policy(d)
    assert pol.defaulted[1, 0]
    assert np.allclose(pol.table[1, 0], 0.5)


def test_seed_does_not_change_value():
    ch, g = make_builtin("trapdoor", 0.25), markov_qgraph(2)
    a, b = solve_ub(ch, g, seed=1).value, solve_ub(ch, g, seed=2).value
    assert a == pytest.approx(b, abs=1e-7)
