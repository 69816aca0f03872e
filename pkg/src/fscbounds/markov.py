"""Stationary analysis of the coupled (S, Q) chain and information measures.

All entropies are in bits.  Joint distributions are arrays ``d[s, q, x, y]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .graphs import closed_classes, period
from .qgraph import CoupledGraph

LN2 = np.log(2.0)
POLICY_TOL = 1e-10
DIRECT_SOLVE_MAX = 512


class ChainError(ValueError):
    """The policy does not induce a unique stationary distribution."""


@dataclass(frozen=True, eq=False)
class InputPolicy:
    """``table[s, q, x] = P(x | s, q)``; ``defaulted`` marks rows filled by convention."""

    table: np.ndarray
    defaulted: np.ndarray = None

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 3:
            raise ValueError("policy table must be indexed [s][q][x]")
        if np.any(t < -POLICY_TOL) or np.any(t > 1 + POLICY_TOL):
            raise ValueError("policy entries must lie in [0, 1]")
        sums = t.sum(axis=2)
        if np.any(np.abs(sums - 1) > POLICY_TOL):
            raise ValueError(f"policy rows must sum to 1 (worst {np.abs(sums - 1).max():.3g})")
        t = np.clip(t, 0.0, 1.0)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        flags = (np.zeros(t.shape[:2], dtype=bool) if self.defaulted is None
                 else np.array(self.defaulted, dtype=bool))
        object.__setattr__(self, "defaulted", flags)

    @property
    def shape(self):
        return self.table.shape


def as_table(policy) -> np.ndarray:
    return policy.table if isinstance(policy, InputPolicy) else np.asarray(policy, dtype=float)


@dataclass(frozen=True, eq=False)
class StationaryResult:
    pi: np.ndarray                 # [s, q]
    residual: float
    unichain: bool
    aperiodic: bool
    closed_class: tuple = ()
    transition: np.ndarray = field(default=None, repr=False)

    @property
    def pi_q(self) -> np.ndarray:
        return self.pi.sum(axis=0)

    def state_given_node(self) -> np.ndarray:
        """``pi_{S|Q}[s, q]``; columns of zero-mass nodes are left at zero."""
        pq = self.pi_q
        out = np.zeros_like(self.pi)
        np.divide(self.pi, pq[None, :], out=out, where=pq[None, :] > 0)
        return out


def stationary_vector(T: np.ndarray, members=None) -> np.ndarray:
    """Stationary law of the irreducible block ``members`` of the stochastic matrix ``T``."""
    n = T.shape[0]
    members = np.arange(n) if members is None else np.asarray(members)
    Tc = T[np.ix_(members, members)]
    m = len(members)
    if m <= DIRECT_SOLVE_MAX:
        A = np.vstack([Tc.T - np.eye(m), np.ones((1, m))])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        v = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        # lazy chain has the same fixed point and is aperiodic
        L = 0.5 * (Tc + np.eye(m))
        v = np.full(m, 1.0 / m)
        for _ in range(200000):
            nv = v @ L
            if np.abs(nv - v).max() < 1e-15:
                v = nv
                break
            v = nv
    v = np.clip(v, 0.0, None)
    v /= v.sum()
    pi = np.zeros(n)
    pi[members] = v
    return pi


def transition_and_stationary(cg: CoupledGraph, policy) -> StationaryResult:
    table = as_table(policy)
    n_s, n_q = cg.shape
    if table.shape[:2] != (n_s, n_q) or table.shape[2] != cg.channel.input_count:
        raise ValueError(f"policy shape {table.shape} does not match "
                         f"({n_s}, {n_q}, {cg.channel.input_count})")
    T = cg.transition_matrix(table)
    adj = T > 0
    classes = closed_classes(adj)
    if len(classes) != 1:
        named = [[divmod(int(i), n_q) for i in c] for c in classes]
        raise ChainError(f"policy induces {len(classes)} closed classes (s, q): {named}")
    members = classes[0]
    aperiodic = period(adj, members) == 1
    pi = stationary_vector(T, members)
    residual = float(np.abs(pi @ T - pi).max())
    return StationaryResult(pi.reshape(n_s, n_q), residual, True, aperiodic,
                            tuple(int(i) for i in members), T)


# ---------------------------------------------------------------------------
# information measures

def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    return float(-xlogy(p, p).sum() / LN2)


def binary_entropy(a):
    """H_2 in bits, with 0 log 0 = 0; accepts scalars or arrays."""
    a = np.asarray(a, dtype=float)
    h = -(xlogy(a, a) + xlogy(1.0 - a, 1.0 - a)) / LN2
    return float(h) if h.ndim == 0 else h


def joint_distribution(kernel: np.ndarray, policy, pi: np.ndarray) -> np.ndarray:
    """``d[s,q,x,y] = pi(s,q) P(x|s,q) W(y|x,s)``."""
    table = as_table(policy)
    return pi[:, :, None, None] * table[:, :, :, None] * kernel[:, None, :, :]


def output_entropy_given_node(d: np.ndarray) -> float:
    """H(Y|Q) of ``d[s, q, x, y]``."""
    pqy = d.sum(axis=(0, 2))
    pq = pqy.sum(axis=1)
    return float((xlogy(pq, pq).sum() - xlogy(pqy, pqy).sum()) / LN2)


def channel_entropy(d: np.ndarray, kernel: np.ndarray = None) -> float:
    """H(Y|X,S,Q); linear in ``d`` when the channel kernel is supplied."""
    if kernel is not None:
        hw = -xlogy(kernel, kernel).sum(axis=2) / LN2           # [s, x]
        return float(np.einsum("sqx,sx->", d.sum(axis=3), hw))
    psqx = d.sum(axis=3, keepdims=True)
    return float((xlogy(psqx, psqx).sum() - xlogy(d, d).sum()) / LN2)


def conditional_mutual_information(d: np.ndarray, kernel: np.ndarray = None) -> float:
    """I(X,S;Y|Q) = H(Y|Q) - H(Y|X,S,Q) in bits per channel use."""
    d = np.asarray(d, dtype=float)
    return output_entropy_given_node(d) - channel_entropy(d, kernel)


def policy_rate(cg: CoupledGraph, policy) -> tuple[float, StationaryResult]:
    st = transition_and_stationary(cg, policy)
    d = joint_distribution(cg.channel.kernel, policy, st.pi)
    return conditional_mutual_information(d, cg.channel.kernel), st
