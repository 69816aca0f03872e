"""Convex upper-bound program over joint distributions ``d[s, q, x, y]``.

The variable is the joint law of (S, Q, X, Y); the next pair (S+, Q+) is
implied by ``f`` and ``g``.  Constraints are stationarity of the (S, Q)
marginal, preservation of the channel law, and normalisation.  The objective
``-I(X,S;Y|Q)`` is convex on this polytope, so any certified local optimum
is the global one.

The solver works on the exact reduction ``d = W(y|x,s) u(s,q,x)``: the channel
rows are then satisfied identically and ``u`` ranges over
``{u >= 0, A u = b}`` with one stationarity row per (s, q) plus the pmf row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .channels import UnifilarChannel
from .markov import LN2, InputPolicy, transition_and_stationary
from .qgraph import CoupledGraph, QGraph, couple, validate_coupled

GRADIENT_CAP = 1e6
POLICY_THRESHOLD = 1e-12


class SolverError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InvalidGraphError(ValueError):
    """The coupled graph lacks a single aperiodic closed communicating class."""


@dataclass(frozen=True)
class BoundResult:
    value: float                    # bits per channel use
    kind: str                       # "upper" | "lower"
    feasibility_residual: float
    optimality_gap: float
    iterations: int
    argmax: np.ndarray = field(repr=False)
    status: str = "optimal"
    graph: str = ""

    @property
    def certified_value(self) -> float:
        """Value guaranteed to bound the program's optimum (UB: value + gap)."""
        return self.value + self.optimality_gap if self.kind == "upper" else self.value


# ---------------------------------------------------------------------------
# the linear system over d

@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    b: np.ndarray
    shape: tuple                    # (S, Q, X, Y)
    row_kind: np.ndarray            # "stationary" | "channel" | "pmf"
    row_label: list
    pinned: np.ndarray              # d entries forced to zero by the channel support

    @property
    def variable_count(self) -> int:
        return int(np.prod(self.shape))

    def residual(self, d: np.ndarray) -> float:
        d = np.asarray(d, dtype=float).ravel()
        eq = np.abs(self.A @ d - self.b).max()
        neg = max(0.0, -d.min())
        pinned = np.abs(d[self.pinned.ravel()]).max(initial=0.0)
        return float(max(eq, neg, pinned))

    def rows(self, kind: str) -> np.ndarray:
        return np.flatnonzero(self.row_kind == kind)


def _require_valid(cg: CoupledGraph):
    rep = validate_coupled(cg)
    if not rep.ok:
        raise InvalidGraphError(
            f"coupled graph of {cg.channel.name} with Q-graph {cg.qgraph.label()} "
            f"is not admissible: single_closed_class={rep.single_closed_class}, "
            f"aperiodic={rep.aperiodic}")
    return rep


def build_constraints(ch: UnifilarChannel, g: QGraph, check: bool = True) -> LinearSystem:
    cg = couple(ch, g)
    if check:
        _require_valid(cg)
    n_s, n_q, n_x, n_y = ch.state_count, g.node_count, ch.input_count, ch.output_count
    shape = (n_s, n_q, n_x, n_y)
    n = n_s * n_q * n_x * n_y
    flat = np.arange(n).reshape(shape)
    W, f = ch.kernel, ch.next_state

    stat = np.zeros((n_s * n_q, n))
    for s in range(n_s):
        for q in range(n_q):
            stat[s * n_q + q, flat[s, q].ravel()] += 1.0
    for s, q, x, y, sp, qp in cg.edges:
        stat[sp * n_q + qp, flat[s, q, x, y]] -= 1.0

    chan = np.zeros((n, n))
    for s in range(n_s):
        for q in range(n_q):
            for x in range(n_x):
                block = flat[s, q, x]
                for y in range(n_y):
                    r = flat[s, q, x, y]
                    chan[r, block] -= W[s, x, y]
                    chan[r, r] += 1.0

    A = np.vstack([stat, chan, np.ones((1, n))])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    kinds = np.array(["stationary"] * (n_s * n_q) + ["channel"] * n + ["pmf"])
    labels = ([("stationary", s, q) for s in range(n_s) for q in range(n_q)]
              + [("channel",) + tuple(int(i) for i in np.unravel_index(r, shape))
                 for r in range(n)]
              + [("pmf",)])
    pinned = np.broadcast_to((W == 0)[:, None, :, :], shape).copy()
    return LinearSystem(A, b, shape, kinds, labels, pinned)


# ---------------------------------------------------------------------------
# objective in d-space

def objective_and_gradient(d: np.ndarray, ch: UnifilarChannel, cap: float = GRADIENT_CAP):
    """Return ``(-I(X,S;Y|Q), gradient)`` in bits.

    ``H(Y|X,S,Q)`` is taken as the linear functional ``sum d * H(W(.|x,s))``.
    The gradient is ``log2 P(y|q) + H(W(.|x,s))``; entries whose (q, y) has no
    mass get the one-sided limit, clamped at ``-cap``.
    """
    d = np.asarray(d, dtype=float)
    W = ch.kernel
    hw = np.zeros(W.shape[:2])
    pos = W > 0
    hw = -(np.where(pos, W * np.log2(np.where(pos, W, 1.0)), 0.0)).sum(axis=2)   # [s, x]
    pqy = d.sum(axis=(0, 2))
    pq = pqy.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log2(pqy / pq[:, None])
    log_ratio = np.where(pqy > 0, log_ratio, -cap)
    log_ratio = np.where(pq[:, None] > 0, log_ratio, 0.0)
    log_ratio = np.maximum(log_ratio, -cap)
    h_yq = -float(np.sum(np.where(pqy > 0, pqy * log_ratio, 0.0)))
    h_lin = float(np.einsum("sqxy,sx->", d, hw))
    grad = log_ratio[None, :, None, :] + hw[:, None, :, None]
    return h_lin - h_yq, np.broadcast_to(grad, d.shape).copy()


# ---------------------------------------------------------------------------
# reduced problem in u = P(s, q, x)

class ReducedProblem:
    """The program restricted to ``u(s,q,x)`` on the closed class of the coupled graph."""

    def __init__(self, ch: UnifilarChannel, g: QGraph):
        self.channel, self.qgraph = ch, g
        self.coupled = cg = couple(ch, g)
        rep = _require_valid(cg)
        n_s, n_q, n_x, n_y = ch.state_count, g.node_count, ch.input_count, ch.output_count
        self.shape = (n_s, n_q, n_x, n_y)
        closed = np.zeros(n_s * n_q, dtype=bool)
        closed[list(rep.closed_classes[0])] = True
        self.closed_nodes = closed.reshape(n_s, n_q)
        var = [(s, q, x) for s in range(n_s) for q in range(n_q) for x in range(n_x)
               if self.closed_nodes[s, q]]
        self.var = np.array(var, dtype=np.int64)
        self.n = n = len(var)
        self.flat = (self.var[:, 0] * n_q + self.var[:, 1]) * n_x + self.var[:, 2]
        s, q, x = self.var.T
        W = ch.kernel

        node_rows = {int(i): k for k, i in enumerate(np.flatnonzero(closed))}
        A = np.zeros((len(node_rows) + 1, n))
        for j in range(n):
            A[node_rows[s[j] * n_q + q[j]], j] += 1.0
            for y in range(n_y):
                if W[s[j], x[j], y] > 0:
                    sp, qp = ch.next_state[s[j], x[j], y], g.transition[q[j], y]
                    A[node_rows[sp * n_q + qp], j] -= W[s[j], x[j], y]
        A[-1] = 1.0
        self.A = A
        self.b = np.zeros(len(A))
        self.b[-1] = 1.0
        self.null = null_space(A)

        # P(q, y) = B u and P(q) = C u, keeping only rows that can carry mass
        B = np.zeros((n_q * n_y, n))
        for j in range(n):
            B[q[j] * n_y + np.arange(n_y), j] = W[s[j], x[j]]
        self.qy_rows = np.flatnonzero(B.any(axis=1))
        self.B = B[self.qy_rows]
        C = np.zeros((n_q, n))
        C[q, np.arange(n)] = 1.0
        self.q_rows = np.flatnonzero(C.any(axis=1))
        self.C = C[self.q_rows]
        Wn = np.where(W > 0, W, 1.0)
        self.h = -(W * np.log(Wn)).sum(axis=2)[s, x]      # nats

    # -- conversions
    def to_joint(self, u: np.ndarray) -> np.ndarray:
        n_s, n_q, n_x, n_y = self.shape
        full = np.zeros(n_s * n_q * n_x)
        full[self.flat] = u
        return full.reshape(n_s, n_q, n_x)[..., None] * self.channel.kernel[:, None, :, :]

    def from_joint(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d).sum(axis=3).ravel()[self.flat]

    def from_policy(self, policy) -> np.ndarray:
        st = transition_and_stationary(self.coupled, policy)
        table = policy.table if isinstance(policy, InputPolicy) else np.asarray(policy)
        return (st.pi[:, :, None] * table).ravel()[self.flat]

    def interior_point(self, rng=None) -> np.ndarray:
        n_s, n_q, n_x, _ = self.shape
        if rng is None:
            table = np.full((n_s, n_q, n_x), 1.0 / n_x)
        else:
            table = rng.dirichlet(np.ones(n_x), size=(n_s, n_q))
        return self.from_policy(table)

    # -- objective (nats) and derivatives
    def info(self, u: np.ndarray) -> float:
        pqy, pq = self.B @ u, self.C @ u
        return float(_xlogx(pq).sum() - _xlogx(pqy).sum() - self.h @ u)

    def info_bits(self, u: np.ndarray) -> float:
        return self.info(u) / LN2

    def gradient(self, u: np.ndarray) -> np.ndarray:
        pqy, pq = self.B @ u, self.C @ u
        lqy = np.log(np.maximum(pqy, 1e-300))
        lq = np.log(np.maximum(pq, 1e-300))
        return self.C.T @ lq - self.B.T @ lqy - self.h

    def hessian(self, u: np.ndarray) -> np.ndarray:
        pqy, pq = self.B @ u, self.C @ u
        Bs = self.B / np.sqrt(np.maximum(pqy, 1e-300))[:, None]
        Cs = self.C / np.sqrt(np.maximum(pq, 1e-300))[:, None]
        return Cs.T @ Cs - Bs.T @ Bs

    def frank_wolfe_gap(self, u: np.ndarray) -> float:
        """``max_{v in polytope} grad(u) . (v - u)`` in bits, an upper bound on suboptimality."""
        c = self.gradient(u)
        res = linprog(-c, A_eq=self.A, b_eq=self.b, bounds=(0, None), method="highs")
        if res.status != 0:
            raise SolverError(f"certificate LP failed: {res.message}")
        return max(0.0, float(-res.fun - c @ u)) / LN2


def _xlogx(v):
    v = np.maximum(v, 0.0)
    return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)


def barrier_maximize(prob: ReducedProblem, u0: np.ndarray, gap_tol: float = 1e-10,
                     max_iter: int = 500):
    """Log-barrier Newton ascent for ``max I(u)`` over ``{u >= 0, A u = b}``.

    Returns ``(u, newton_steps, barrier_gap)`` with ``barrier_gap = n / t`` in nats.
    """
    N = prob.null
    u = u0.copy()
    n = prob.n
    if N.shape[1] == 0 or n == 0:
        return u, 0, 0.0
    t = 1.0
    steps = 0
    while True:
        for _ in range(100):
            g = t * prob.gradient(u) + 1.0 / u
            H = t * prob.hessian(u) - np.diag(1.0 / u ** 2)
            gz = N.T @ g
            Hz = N.T @ H @ N
            try:
                dz = -np.linalg.solve(Hz, gz)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(Hz, gz, rcond=None)[0]
            dec2 = float(gz @ dz)
            du = N @ dz
            steps += 1
            if dec2 <= 1e-12 or steps > max_iter:
                break
            neg = du < 0
            alpha = min(1.0, 0.99 * float(np.min(-u[neg] / du[neg]))) if neg.any() else 1.0
            phi0 = t * prob.info(u) + np.log(u).sum()
            while alpha > 1e-14:
                cand = u + alpha * du
                if np.all(cand > 0):
                    phi = t * prob.info(cand) + np.log(cand).sum()
                    if phi >= phi0 + 0.25 * alpha * dec2:
                        break
                alpha *= 0.5
            if alpha <= 1e-14:
                break
            u = u + alpha * du
        if n / t < gap_tol or steps > max_iter:
            break
        t *= 8.0
    return u, steps, n / t


def solve_ub(ch: UnifilarChannel, g: QGraph, feas_tol: float = 1e-8, obj_tol: float = 1e-6,
             max_iter: int = 500, seed=None) -> BoundResult:
    """Maximise I(X,S;Y|Q) over the stationary polytope of (channel, Q-graph).

    ``seed`` randomises the interior starting point; the optimum value does
    not depend on it.  The reported gap is a Frank-Wolfe certificate.
    """
    prob = ReducedProblem(ch, g)
    rng = None if seed is None else np.random.default_rng(seed)
    u0 = prob.interior_point(rng)
    u, steps, _ = barrier_maximize(prob, u0, gap_tol=min(obj_tol, 1e-8) * LN2 * 1e-2,
                                   max_iter=max_iter)
    u = np.maximum(u, 0.0)
    d = prob.to_joint(u)
    system = build_constraints(ch, g, check=False)
    feas = system.residual(d)
    gap = prob.frank_wolfe_gap(u)
    res = BoundResult(value=prob.info_bits(u), kind="upper", feasibility_residual=feas,
                      optimality_gap=gap, iterations=steps, argmax=d, graph=g.label())
    if feas > feas_tol:
        raise SolverError(f"feasibility residual {feas:.3g} exceeds {feas_tol:g}", res)
    if gap > obj_tol:
        status = "iteration_cap" if steps > max_iter else "gap_above_tolerance"
        raise SolverError(f"optimality gap {gap:.3g} exceeds {obj_tol:g} ({status})",
                          BoundResult(**{**res.__dict__, "status": status}))
    return res


def extract_policy(d: np.ndarray, threshold: float = POLICY_THRESHOLD):
    """Invert ``d = pi(s,q) P(x|s,q) W(y|x,s)`` into ``(policy, pi[s, q])``.

    Rows whose (s, q) mass is at most ``threshold`` become uniform and are
    flagged in ``policy.defaulted``.
    """
    d = np.asarray(d, dtype=float)
    psqx = d.sum(axis=3)
    psq = psqx.sum(axis=2)
    low = psq <= threshold
    n_x = d.shape[2]
    table = np.where(low[..., None], 1.0 / n_x,
                     psqx / np.where(low, 1.0, psq)[..., None])
    pi = np.where(low, 0.0, psq)
    return InputPolicy(table, defaulted=low), pi / pi.sum()
