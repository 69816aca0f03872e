"""Lower bounds from graph-based encoders.

A graph-based encoder is a Q-graph plus an input policy ``P(x|s,q)`` whose
induced state posterior is invariant under the Bayesian (BCJR) update: the
posterior of ``S+`` given ``(Q, Y)`` depends only on ``Q+ = g(Q, Y)``.  Such a
pair achieves ``I(X,S;Y|Q)``, so every certified encoder is a capacity lower
bound regardless of how it was found.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .channels import UnifilarChannel, channel_from_dict
from .markov import (LN2, ChainError, InputPolicy, StationaryResult,
                     conditional_mutual_information, joint_distribution,
                     transition_and_stationary)
from .qgraph import QGraph, couple, qgraph_from_dict
from .upper import InvalidGraphError, ReducedProblem

CERTIFY_TOL = 1e-7
MASS_TOL = 1e-14


class CertificationError(ValueError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NoCertifiedEncoder(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True, eq=False)
class GraphEncoder:
    qgraph: QGraph
    policy: InputPolicy
    pi: StationaryResult = field(repr=False)
    bcjr_residual: float
    rate: float
    channel: UnifilarChannel = field(default=None, repr=False)

    def joint(self) -> np.ndarray:
        return joint_distribution(self.channel.kernel, self.policy, self.pi.pi)

    def to_dict(self) -> dict:
        return {"channel": self.channel.to_dict() if self.channel is not None else None,
                "qgraph": self.qgraph.to_dict(),
                "policy": self.policy.table.tolist(),
                "p": (self.channel.params or {}).get("p") if self.channel is not None else None,
                "rate": self.rate,
                "bcjr_residual": self.bcjr_residual}


def bcjr_update(ch: UnifilarChannel, g: QGraph, table: np.ndarray, beta: np.ndarray):
    """Posterior of ``S+`` given ``(q, y)`` from prior ``beta[s, q] = pi(s|q)``.

    Returns ``(post[s+, q, y], mass[q, y])`` where ``mass`` is ``P(y|q)``;
    entries with zero mass are left at zero.
    """
    W, f = ch.kernel, ch.next_state
    n_s, n_q, n_y = ch.state_count, g.node_count, ch.output_count
    num = np.zeros((n_s, n_q, n_y))
    # w[s, q, x, y] = beta(s|q) P(x|s,q) W(y|x,s)
    w = beta[:, :, None, None] * table[:, :, :, None] * W[:, None, :, :]
    for s, x, y in zip(*np.nonzero(ch.support)):
        num[f[s, x, y], :, y] += w[s, :, x, y]
    mass = num.sum(axis=0)
    post = np.zeros_like(num)
    np.divide(num, mass[None], out=post, where=mass[None] > MASS_TOL)
    return post, mass


def _residual_from(ch, g, table, st: StationaryResult) -> float:
    beta = st.state_given_node()
    post, mass = bcjr_update(ch, g, table, beta)
    target = beta[:, g.transition]                    # [s+, q, y]
    ok = (mass > MASS_TOL) & (st.pi_q[:, None] > 0)
    diff = np.abs(post - target)[:, ok]
    return float(diff.max(initial=0.0))


def bcjr_residual(ch: UnifilarChannel, g: QGraph, pol) -> float:
    """Largest violation of the BCJR invariance over supported ``(s+, q, y)``."""
    table = pol.table if isinstance(pol, InputPolicy) else np.asarray(pol, dtype=float)
    st = transition_and_stationary(couple(ch, g), table)
    return _residual_from(ch, g, table, st)


def bcjr_constraints(ch: UnifilarChannel, g: QGraph, d: np.ndarray) -> np.ndarray:
    """``P(s+|q,y) - P(s+|q+)`` for every ``(s+, q, y)`` computed from a joint ``d``.

    Triplets with ``P(q, y) = 0`` carry no constraint and are returned as 0.
    """
    d = np.asarray(d, dtype=float)
    f = ch.next_state
    n_s = ch.state_count
    # joint of (s+, q, y)
    sqy = np.zeros((n_s, g.node_count, ch.output_count))
    for s, x, y in zip(*np.nonzero(ch.support)):
        sqy[f[s, x, y], :, y] += d[s, :, x, y]
    pqy = sqy.sum(axis=0)
    cond = np.zeros_like(sqy)
    np.divide(sqy, pqy[None], out=cond, where=pqy[None] > MASS_TOL)
    # marginal of (s+, q+)
    spq = np.zeros((n_s, g.node_count))
    for q in range(g.node_count):
        for y in range(ch.output_count):
            spq[:, g.transition[q, y]] += sqy[:, q, y]
    pqp = spq.sum(axis=0)
    target = np.zeros_like(spq)
    np.divide(spq, pqp[None], out=target, where=pqp[None] > MASS_TOL)
    out = cond - target[:, g.transition]
    out[:, pqy <= MASS_TOL] = 0.0
    return out


def certify_encoder(ch: UnifilarChannel, g: QGraph, pol, tol: float = CERTIFY_TOL) -> GraphEncoder:
    """Independently check a policy and return the encoder with its achievable rate."""
    policy = pol if isinstance(pol, InputPolicy) else InputPolicy(pol)
    try:
        st = transition_and_stationary(couple(ch, g), policy.table)
    except ChainError as exc:
        raise CertificationError(f"policy is not unichain: {exc}") from exc
    if not st.aperiodic:
        raise CertificationError("policy induces a periodic (S, Q) chain")
    res = _residual_from(ch, g, policy.table, st)
    if not res <= tol:
        raise CertificationError(f"BCJR residual {res:.3g} exceeds {tol:g}", res)
    d = joint_distribution(ch.kernel, policy, st.pi)
    rate = conditional_mutual_information(d, ch.kernel)
    return GraphEncoder(g, policy, st, res, rate, ch)


# ---------------------------------------------------------------------------
# encoder files

def write_encoder(enc: GraphEncoder, path) -> None:
    Path(path).write_text(json.dumps(enc.to_dict(), indent=2) + "\n")


def read_encoder(path, channel: UnifilarChannel = None, tol: float = CERTIFY_TOL) -> GraphEncoder:
    """Load an encoder file and re-certify it against ``channel`` (or the stored one)."""
    doc = json.loads(Path(path).read_text())
    ch = channel if channel is not None else channel_from_dict(doc["channel"])
    g = qgraph_from_dict(doc["qgraph"])
    return certify_encoder(ch, g, np.array(doc["policy"], dtype=float), tol)


# ---------------------------------------------------------------------------
# non-convex program

class _BcjrSystem:
    """Bilinear BCJR constraints ``v(s+|q,y) pi_Q(q+) - P(q,y) pi(s+,q+)`` over ``u``."""

    def __init__(self, prob: ReducedProblem):
        ch, g = prob.channel, prob.qgraph
        n_s, n_q, n_x, n_y = prob.shape
        s, q, x = prob.var.T
        n = prob.n
        V = np.zeros((n_s, n_q, n_y, n))
        for j in range(n):
            for y in range(n_y):
                w = ch.kernel[s[j], x[j], y]
                if w > 0:
                    V[ch.next_state[s[j], x[j], y], q[j], y, j] += w
        Pi = np.zeros((n_s, n_q, n))
        Pi[s, q, np.arange(n)] = 1.0
        # The s+ rows of one (q, y) sum to zero, and under stationarity the
        # rows of all (q, y) entering the same q+ sum to zero as well; drop
        # one representative of each.
        rows, last_in = [], {}
        for qq in range(n_q):
            for y in range(n_y):
                if V[:, qq, y].any():
                    last_in[int(g.transition[qq, y])] = (qq, y)
        for qq in range(n_q):
            for y in range(n_y):
                qp = int(g.transition[qq, y])
                if not V[:, qq, y].any() or last_in[qp] == (qq, y):
                    continue
                for sp in range(n_s - 1):
                    rows.append((sp, qq, y, qp))
        self.rows = rows
        self.V = np.array([V[sp, qq, y] for sp, qq, y, _ in rows]).reshape(-1, n)
        self.P = np.array([V[:, qq, y].sum(axis=0) for _, qq, y, _ in rows]).reshape(-1, n)
        self.Q = np.array([Pi[:, qp].sum(axis=0) for *_, qp in rows]).reshape(-1, n)
        self.S = np.array([Pi[sp, qp] for sp, _, _, qp in rows]).reshape(-1, n)

    def __call__(self, u):
        return (self.V @ u) * (self.Q @ u) - (self.P @ u) * (self.S @ u)

    def jac(self, u):
        return ((self.V * (self.Q @ u)[:, None]) + (self.Q * (self.V @ u)[:, None])
                - (self.P * (self.S @ u)[:, None]) - (self.S * (self.P @ u)[:, None]))


def _policy_from_u(prob: ReducedProblem, u: np.ndarray) -> np.ndarray:
    n_s, n_q, n_x, _ = prob.shape
    full = np.zeros(n_s * n_q * n_x)
    full[prob.flat] = np.maximum(u, 0.0)
    psqx = full.reshape(n_s, n_q, n_x)
    psq = psqx.sum(axis=2, keepdims=True)
    return np.where(psq > MASS_TOL, psqx / np.where(psq > MASS_TOL, psq, 1.0), 1.0 / n_x)


def _polish(prob, bcjr, u, iters=30):
    """Gauss-Newton projection onto all equality constraints, keeping zeros fixed."""
    free = u > 1e-12
    u = np.where(free, u, 0.0)
    for _ in range(iters):
        r = np.concatenate([prob.A @ u - prob.b, bcjr(u)])
        if np.abs(r).max() < 1e-15:
            break
        J = np.vstack([prob.A, bcju]) if (bcju := bcjr.jac(u)).size else prob.A
        step = np.linalg.lstsq(J[:, free], -r, rcond=None)[0]
        u = u.copy()
        u[free] += step
        if np.any(u[free] < 0):
            u = np.maximum(u, 0.0)
    return u


@dataclass(frozen=True, eq=False)
class LowerBoundResult:
    best: GraphEncoder
    all_values: list
    failures: list = field(default_factory=list)
    note: str = "local search; the value is a certified lower bound, not a global optimum"

    @property
    def value(self) -> float:
        return self.best.rate


def solve_lb(ch: UnifilarChannel, g: QGraph, starts: int = 32, seed=None,
             feas_tol: float = 1e-8, bcjr_tol: float = CERTIFY_TOL,
             max_iter: int = 300) -> LowerBoundResult:
    """Multi-start local maximisation of I(X,S;Y|Q) under the BCJR constraints.

    Each start is a random policy's stationary joint.  Local optima are
    polished, turned into policies and certified from scratch; only certified
    rates are reported.
    """
    prob = ReducedProblem(ch, g)           # raises InvalidGraphError on bad couplings
    bcjr = _BcjrSystem(prob)
    N = prob.null
    rng = np.random.default_rng(seed)
    values, failures, best = [], [], None
    for k in range(starts):
        u0 = prob.interior_point(rng)
        z0 = np.zeros(N.shape[1])
        cons = [{"type": "ineq", "fun": lambda z, u0=u0: u0 + N @ z,
                 "jac": lambda z: N}]
        if bcjr.rows:
            cons.append({"type": "eq", "fun": lambda z, u0=u0: bcjr(u0 + N @ z),
                         "jac": lambda z, u0=u0: bcjr.jac(u0 + N @ z) @ N})
        if N.shape[1]:
            sol = minimize(lambda z, u0=u0: -prob.info(u0 + N @ z),
                           z0, jac=lambda z, u0=u0: -(N.T @ prob.gradient(u0 + N @ z)),
                           method="SLSQP", constraints=cons,
                           options={"maxiter": max_iter, "ftol": 1e-12})
            u = u0 + N @ sol.x
        else:
            u = u0
        u = _polish(prob, bcjr, np.maximum(u, 0.0))
        try:
            enc = certify_encoder(ch, g, _policy_from_u(prob, u), bcjr_tol)
        except (CertificationError, ValueError) as exc:
            failures.append(f"start {k}: {exc}")
            continue
        values.append(enc.rate)
        if best is None or enc.rate > best.rate:
            best = enc
    if best is None:
        raise NoCertifiedEncoder(f"none of {starts} starts produced a certified encoder", failures)
    return LowerBoundResult(best, values, failures)


__all__ = ["GraphEncoder", "LowerBoundResult", "CertificationError", "NoCertifiedEncoder",
           "InvalidGraphError", "bcjr_update", "bcjr_residual", "bcjr_constraints",
           "certify_encoder", "solve_lb", "write_encoder", "read_encoder", "LN2"]
