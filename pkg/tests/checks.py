"""Randomised property checks shared by the property tests and the acceptance suite."""

import numpy as np

from fscbounds.channels import make_builtin
from fscbounds.encoders import ENCODERS, builtin_encoder
from fscbounds.lower import NoCertifiedEncoder, solve_lb
from fscbounds.markov import ChainError, joint_distribution, transition_and_stationary
from fscbounds.qgraph import couple, enumerate_qgraphs, markov_qgraph
from fscbounds.upper import InvalidGraphError, objective_and_gradient, solve_ub

FAMILIES = ("bfc1", "bfc2", "ising", "trapdoor")
POOL = [g for n in (1, 2, 3) for g in enumerate_qgraphs(n, 2)]


def random_instance(rng, max_k=2):
    """Random channel, Markov graph and strictly positive policy with its stationary joint."""
    while True:
        ch = make_builtin(FAMILIES[rng.integers(4)], float(rng.uniform(0.05, 0.95)))
        g = markov_qgraph(int(rng.integers(0, max_k + 1)))
        table = rng.uniform(0.05, 0.95, size=(2, g.node_count))
        table = np.stack([table, 1 - table], axis=2)
        try:
            st = transition_and_stationary(couple(ch, g), table)
        except ChainError:
            continue
        return ch, g, table, joint_distribution(ch.kernel, table, st.pi)


def random_pair(rng):
    """Two stationary joints of the same (channel, graph)."""
    ch, g, _, d1 = random_instance(rng)
    while True:
        table = rng.dirichlet([1, 1], size=(2, g.node_count))
        try:
            st = transition_and_stationary(couple(ch, g), table)
        except ChainError:
            continue
        return ch, d1, joint_distribution(ch.kernel, table, st.pi)


def gradient_error(ch, d, h=1e-7):
    """Relative error of the analytic gradient against central differences on the support."""
    _, grad = objective_and_gradient(d, ch)
    supp = np.broadcast_to((ch.kernel > 0)[:, None, :, :], d.shape)
    fd = np.zeros_like(d)
    for idx in zip(*np.nonzero(supp)):
        e = np.zeros_like(d)
        e[idx] = h
        fd[idx] = (objective_and_gradient(d + e, ch)[0]
                   - objective_and_gradient(d - e, ch)[0]) / (2 * h)
    return float(np.linalg.norm((fd - grad)[supp]) / np.linalg.norm(grad[supp]))


def midpoint_violation(ch, d1, d2):
    f = lambda d: objective_and_gradient(d, ch)[0]
    return f(0.5 * (d1 + d2)) - 0.5 * (f(d1) + f(d2))


def ub_lb_pairs(count, seed=0, starts=3):
    """``count`` random (channel, pool graph) pairs with both bounds; returns (ub, lb, label)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        ch = make_builtin(FAMILIES[rng.integers(4)], float(rng.uniform(0.05, 0.95)))
        g = POOL[rng.integers(len(POOL))]
        try:
            lb = solve_lb(ch, g, starts=starts, seed=int(rng.integers(1 << 30))).value
            ub = solve_ub(ch, g).certified_value
        except (InvalidGraphError, NoCertifiedEncoder):
            continue
        out.append((ub, lb, f"{ch.name} p={ch.params['p']:.3f} graph {g.label()}"))
    return out


def encoder_residuals(points=50):
    """Worst BCJR residual of every built-in encoder over ``points`` in-range values of p."""
    worst = {}
    for eid, spec in ENCODERS.items():
        worst[eid] = max(builtin_encoder(eid, float(p)).bcjr_residual for p in spec.p_grid(points))
    return worst


MONOTONE_CHANNELS = (("trapdoor", 0.3), ("ising", 0.6), ("bfc2", 0.3))


def markov_order_bounds(family, p, orders=(1, 2, 3)):
    ch = make_builtin(family, p)
    return [solve_ub(ch, markov_qgraph(k)).value for k in orders]

