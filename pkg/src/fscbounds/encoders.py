"""Analytic graph-based encoders, their rate formulas, thresholds and a KKT checker.

Q-graph tables are 0-based ``g[q][y]``.  Policies are built from the two
free entries of a binary-input row, ``P(x=0|s=0,q)`` and ``P(x=1|s=1,q)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq, linprog, minimize, minimize_scalar

from .channels import UnifilarChannel, make_builtin
from .lower import GraphEncoder, certify_encoder
from .markov import InputPolicy, binary_entropy as h2
from .qgraph import QGraph
from .upper import ReducedProblem

GRAPHS = {
    "bfc1_2node": [[1, 0], [0, 0]],
    "bfc2_3node": [[0, 1], [2, 2], [0, 1]],
    "bfc2_6node_r2": [[0, 1], [2, 2], [3, 4], [0, 1], [5, 2], [0, 1]],
    "bfc2_6node_r3": [[0, 1], [2, 2], [3, 2], [4, 2], [5, 2], [0, 1]],
    "ising_6node": [[1, 2], [0, 2], [3, 4], [0, 2], [3, 5], [3, 4]],
    "trapdoor_3node": [[1, 0], [2, 0], [2, 1]],
    "trapdoor_4node": [[0, 1], [2, 3], [0, 1], [2, 3]],
}

VALIDITY_TOL = 1e-12


class ValidityError(ValueError):
    """Channel parameter or encoder parameters outside the stated validity region."""


def _rows(stay0, flip1, defaulted_s0=False):
    """Policy table from ``P(0|0,q)`` and ``P(1|1,q)`` per node."""
    stay0, flip1 = np.atleast_1d(np.asarray(stay0, float)), np.atleast_1d(np.asarray(flip1, float))
    if np.any(stay0 < -VALIDITY_TOL) or np.any(stay0 > 1 + VALIDITY_TOL) \
            or np.any(flip1 < -VALIDITY_TOL) or np.any(flip1 > 1 + VALIDITY_TOL):
        raise ValidityError("parameters give input probabilities outside [0, 1]")
    stay0, flip1 = np.clip(stay0, 0, 1), np.clip(flip1, 0, 1)
    t = np.empty((2, len(stay0), 2))
    t[0, :, 0], t[0, :, 1] = stay0, 1 - stay0
    t[1, :, 1], t[1, :, 0] = flip1, 1 - flip1
    flags = np.zeros((2, len(stay0)), dtype=bool)
    if defaulted_s0:
        flags[0] = True
    return InputPolicy(t, defaulted=flags)


def _check_p(p, lo, hi, lo_open=False, hi_open=False):
    bad = (p < lo or p > hi or (lo_open and p == lo) or (hi_open and p == hi))
    if bad:
        lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
        raise ValidityError(f"p={p} outside {lb}{lo}, {hi}{rb}")


# ---------------------------------------------------------------------------
# policies

def bfc1_2node_constraint(p, a):
    return (2 * p - 1) ** 2 * a ** 2 - (p + (2 * p - 1) ** 2) * a + p ** 2


def _bfc1_1node(p):
    _check_p(p, 0.0, 0.5)
    return _rows([0.0], [0.5 / (1 - p)])


def _bfc1_2node(p, a):
    _check_p(p, 0.5, 1.0, lo_open=True)
    if not 0.5 <= a < 1 or bfc1_2node_constraint(p, a) < -VALIDITY_TOL:
        raise ValidityError(f"a={a} outside the admissible set at p={p}")
    t = a * (1 - p) + (1 - a) * p
    stay = [(1 - a) * (2 * p - 1) / p,
            p * (p - a) * (p * (1 - a) + a * (1 - p))
            / ((1 - a) * (2 * p - 1) * (p ** 2 + a * (1 - p) * (2 * p - 1)))]
    flip = [1.0, p ** 2 * (2 * a - 1) / (a * (2 * p - 1) * (1 - t))]
    return _rows(stay, flip)


def _bfc2_3node(p):
    # input in state 0 affects neither output nor next state; (s=1, q=0) is never visited
    _check_p(p, 0.5, 1.0, hi_open=True)
    pol = _rows([0.5] * 3, [0.5, 0.5, 1.0], defaulted_s0=True)
    flags = pol.defaulted.copy()
    flags[1, 0] = True
    return InputPolicy(pol.table, defaulted=flags)


def _bfc2_6node_r2(p, a, b=0.5):
    _check_p(p, 0.0, 0.5, lo_open=True)
    if not (0 <= a <= 1 and 0 <= b <= 1):
        raise ValidityError("(a, b) must lie in [0, 1]^2")
    pb = 1 - p
    q5 = a * (1 - 2 * p * pb) / (2 * (a * pb - a * p * pb + p ** 2))
    return _rows([0.5] * 6, [b, 0.5, a, 1.0, q5, 1.0], defaulted_s0=True)


def _bfc2_6node_r3(p, a=0.5):
    _check_p(p, 0.0, 0.5, lo_open=True)
    if not 0 <= a <= 1:
        raise ValidityError("a must lie in [0, 1]")
    pb = 1 - p
    flip = [a, 0.5,
            (1 - 2 * p) / (2 * pb ** 2),
            (2 * p - 1) ** 2 / (2 * pb ** 2 * (1 - 2 * p * pb)),
            (1 - 2 * p) ** 3 / (2 * pb ** 2 * (4 * p ** 4 - 12 * p ** 3 + 10 * p ** 2 - 4 * p + 1)),
            1.0]
    return _rows([0.5] * 6, flip, defaulted_s0=True)


def ising_k(p, a, b, c):
    pb = 1 - p
    return 1 - pb * ((1 + 2 * p ** 2) * (1 - a * b) + a * (1 - c) * pb + c * p + 3 * a * b * p)


def in_ising_region(p, a, b, c, tol=VALIDITY_TOL) -> bool:
    pb = 1 - p
    return bool(
        -tol <= c <= 0.5 + tol and 0.5 - tol <= a <= b + tol and b <= 1 + tol
        and p * (1 - a * b) - (1 - a) * b >= -tol
        and a * pb * (1 - b - c) - p * (1 - c) + a * b * p + p ** 2 * (1 - a * b) >= -tol
        and a * b * pb * (p ** 2 + pb * (1 - b) + (1 - c)) + (1 - c) * (p * (1 - b) - a * pb)
        - p ** 2 * pb >= -tol)


def _ising_6node(p, a, b, c):
    _check_p(p, 0.5, 1.0)
    if not in_ising_region(p, a, b, c):
        raise ValidityError(f"(a, b, c)=({a}, {b}, {c}) is outside the admissible region")
    k = ising_k(p, a, b, c)
    m = a - p - a * b - a * c - a * p + c * p + p ** 2 + 2 * a * b * p + a * c * p - a * b * p ** 2
    s0 = [(p * (b * a * a * p - b * a * a + b * a * p ** 2 - a * b * p + a * b - p ** 2) + k)
          / (p ** 2 * (a - p - a * b + a * b * p) + k),
          (p * (a * b * b * p - a * b * b + a * b * p ** 2 - a * b * p + a * b - p ** 2) + k)
          / (p ** 2 * (b - p - a * b + a * b * p) + k),
          (p - c) / p]
    # P(x=0 | s=1, q) for q = 1..3
    z1 = [(1 - a) * m / (p ** 2 * (a * b + p - a - a * b * p)),
          (1 - b) * m / (p ** 2 * (a * b + p - b - a * b * p)),
          (1 - c) * p * (a - p - a * b + a * b * p)
          / (a - p - a * b - a * c - a * p + c * p + p ** 2 - p ** 3 + 3 * a * b * p
             + a * c * p - 3 * a * b * p ** 2 + a * b * p ** 3)]
    stay = s0 + [1 - z for z in (z1[2], z1[0], z1[1])]
    # q = 4..6 mirror q = 3, 1, 2 with the state and input bits swapped
    flip = [1 - z for z in z1] + [s0[2], s0[0], s0[1]]
    return _rows(stay, flip)


def _trapdoor_3node(p):
    # at p = 0 and p = 0.5 the policy is deterministic and the chain splits
    _check_p(p, 0.0, 0.5, lo_open=True, hi_open=True)
    pb = 1 - p
    return _rows([1.0, 1 / (2 * pb), p / pb], [p / pb, 1 / (2 * pb), 1.0])


def _trapdoor_4node(p, a, b):
    _check_p(p, 0.5, 1.0, lo_open=True, hi_open=True)
    pb = 1 - p
    if not (0 < a < 1 and 0 <= b <= 1) or a == b:
        raise ValidityError(f"(a, b)=({a}, {b}) is outside the admissible region")
    e = a * (1 - a) * pb - (1 - a) * b + a * a * p - a * b * p
    f = (a * pb ** 2 + 2 * a * b * pb ** 2 + 5 * a * a * p * pb - b * pb - a * a * pb
         - a * b * p * pb + b * p ** 2 - a * a)
    stay1 = b / a
    flip1 = e / (a * (1 - a) * pb)
    stay2 = e * f / (p * pb * a * (1 - a) * (b * p - a * b * pb - 2 * a * a * p + a * a))
    flip2 = (b - a) * (f - a * (1 - a) * p * pb) / (p * (1 - a) * e)
    return _rows([stay1, stay2, flip2, flip1], [flip1, flip2, stay2, stay1])


# ---------------------------------------------------------------------------
# closed forms

def r1_i(p):
    return 1 - h2(p)


def r2_i(p, a):
    t = a * (1 - p) + (1 - a) * p
    inner = h2(a * (1 - p) / t) if t > 0 else 0.0
    return (h2(t) + t * inner) / (1 + t) - h2(p)


def r1_ii(p):
    return (1 + h2(2 * p * (1 - p)) - 2 * h2(p)) / (2 * (2 - p))


def _gammas(p, a):
    pb, ab = 1 - p, 1 - a
    return [pb, 0.5, pb * (2 * p * a + ab), 2 * p * pb / (2 * p * a + ab),
            (2 * p * pb * (1 - 2 * a) + a) / (2 * (p + a - 3 * p * a + 2 * p * p * a)),
            2 * p * pb * (2 * p * p - 2 * p + 1) / (2 * p * pb * (1 - 2 * a) + a)]


def r2_ii(p, a, b=None):
    g1, g2, g3, g4, g5, g6 = gam = _gammas(p, a)
    w = np.array([g3 * g4 + (1 - g3) * g5 * g6, (1 - g1) * (g3 + (1 - g3) * g5), 1 - g1,
                  (1 - g1) * g3, (1 - g1) * (1 - g3), (1 - g1) * (1 - g3) * g5])
    return float(w @ h2(np.array(gam)) / w.sum() - h2(p))


def _lambdas(p):
    pb = 1 - p
    poly = -8 * p ** 6 + 48 * p ** 5 - 116 * p ** 4 + 124 * p ** 3 - 58 * p ** 2 + 8 * p + 1
    return [pb, 0.5, (1 - 2 * p * p) / (2 * pb),
            (1 + 2 * p * pb * (2 * p * p - 6 * p + 1)) / (2 * pb * (1 - 2 * p * p)),
            poly / (8 * p ** 5 - 40 * p ** 4 + 60 * p ** 3 - 32 * p ** 2 + 2 * p + 2),
            16 * p * pb ** 7 / poly]


def r3_ii(p, a=None):
    l1, l2, l3, l4, l5, l6 = lam = _lambdas(p)
    w = np.array([l3 * l4 * l5 * l6, (1 - l1) * l3 * l4 * l5, 1 - l1, (1 - l1) * l3,
                  (1 - l1) * l3 * l4, (1 - l1) * l3 * l4 * l5])
    return float(w @ h2(np.array(lam)) / w.sum() - h2(p))


def r_ising(p, a, b, c):
    k = ising_k(p, a, b, c)
    pb, cb = 1 - p, 1 - c
    bracket = (h2(a) + a * h2(b) + (1 - a * b) / cb * h2(c)
               + (1 - a * b) * (k - 2 * p ** 3 + 2 * a * b * p * pb ** 2) / (k * cb) * h2(p))
    return cb / (cb * (1 + a) + 1 - a * b) * bracket


def trapdoor_z(p):
    return (1 - 2 * p) / (1 - p)


def r_t1(p):
    z = trapdoor_z(p)
    return (h2(z) + z * (1 - h2((1 - z) / (2 - z)))) / (1 + z)


def r_t2_k(p, a, b):
    return 1 - (1 - p) * (2 * a - 3 * a * p + 5 * p + b * p - 1)


def r_t2_constraint(p, a, b):
    """Must be <= 0 for the pair to be admissible."""
    return (b * p ** 2 + a * (1 - p) ** 2 - (1 - p) * p) / r_t2_k(p, a, b)


def r_t2(p, a, b):
    k = r_t2_k(p, a, b)
    ab, bb, pb = 1 - a, 1 - b, 1 - p
    return (bb * h2(a) + ab * h2(b)
            - ab * (2 * p - 1) * (p - ab * pb - bb * pb) / k * h2(p)) / (ab + bb)


def c_t_ub(p, a):
    return (h2(a) + a * (1 - h2(p))) / (1 + a)


def c_t_ub_condition(p, a):
    """First-order condition of ``c_t_ub`` in ``a``; zero at the maximiser."""
    return np.log2((1 - a) ** 2 / a) - (h2(p) - 1)


@dataclass(frozen=True)
class ClosedForm:
    id: str
    func: Callable
    params: tuple
    p_range: tuple                  # (lo, hi)
    encoder: str = ""


FORMULAS = {
    "R1_I": ClosedForm("R1_I", r1_i, (), (0.0, 0.5), "bfc1_1node"),
    "R2_I": ClosedForm("R2_I", r2_i, ("a",), (0.5, 1.0), "bfc1_2node"),
    "R1_II": ClosedForm("R1_II", r1_ii, (), (0.5, 1.0), "bfc2_3node"),
    "R2_II": ClosedForm("R2_II", r2_ii, ("a",), (0.0, 0.5), "bfc2_6node_r2"),
    "R3_II": ClosedForm("R3_II", r3_ii, (), (0.0, 0.5), "bfc2_6node_r3"),
    "R_ISING": ClosedForm("R_ISING", r_ising, ("a", "b", "c"), (0.5, 1.0), "ising_6node"),
    "R_T1": ClosedForm("R_T1", r_t1, (), (0.0, 0.5), "trapdoor_3node"),
    "R_T2": ClosedForm("R_T2", r_t2, ("a", "b"), (0.5, 1.0), "trapdoor_4node"),
    "C_T_UB": ClosedForm("C_T_UB", c_t_ub, ("a",), (0.0, 1.0)),
}


def closed_form_rate(fid: str, p: float, params=None) -> float:
    """Evaluate a rate formula; with ``params=None`` free parameters are optimised."""
    form = FORMULAS[fid]
    lo, hi = form.p_range
    if not lo <= p <= hi:
        raise ValidityError(f"{fid} is defined for p in [{lo}, {hi}], got {p}")
    if form.params and params is None:
        return optimize_params(fid, p)[1]
    params = () if params is None else tuple(np.atleast_1d(params))
    if len(params) != len(form.params):
        raise ValueError(f"{fid} takes parameters {form.params}")
    return float(form.func(p, *params))


# ---------------------------------------------------------------------------
# parameter optimisation

def _bounded_max(f, lo, hi, grid=201):
    xs = np.linspace(lo, hi, grid)
    vals = np.array([f(x) for x in xs])
    i = int(np.nanargmax(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    res = minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    return (res.x, -res.fun) if -res.fun >= vals[i] else (xs[i], vals[i])


def _bfc1_a_max(p):
    if bfc1_2node_constraint(p, 1.0) >= 0:
        return 1.0 - 1e-12
    return brentq(lambda a: bfc1_2node_constraint(p, a), 0.5, 1.0, xtol=1e-15)


def _r2_ii_admissible(p, a):
    try:
        _bfc2_6node_r2(p, a)
    except ValidityError:
        return False
    return True


def optimize_params(fid: str, p: float):
    """Maximise a parametrised rate over its admissible set; returns ``(params, rate)``."""
    form = FORMULAS[fid]
    if not form.params:
        raise ValueError(f"{fid} has no free parameters")
    lo, hi = form.p_range
    if not lo <= p <= hi:
        raise ValidityError(f"{fid} is defined for p in [{lo}, {hi}], got {p}")
    if fid == "C_T_UB":
        a, v = _bounded_max(lambda a: c_t_ub(p, a), 1e-12, 1 - 1e-12)
        return (a,), float(v)
    if fid == "R2_I":
        if p == 0.5:
            return (0.5,), float(r2_i(p, 0.5))
        a, v = _bounded_max(lambda a: r2_i(p, a), 0.5, _bfc1_a_max(p))
        return (a,), float(v)
    if fid == "R2_II":
        f = lambda a: r2_ii(p, a) if _r2_ii_admissible(p, a) else -np.inf
        a, v = _bounded_max(f, 0.0, 1.0, grid=401)
        return (a,), float(v)
    if fid == "R_T2":
        return _optimize_r_t2(p)
    if fid == "R_ISING":
        return _optimize_ising(p)
    raise ValueError(fid)


def trapdoor_4node_output_params(p, a, b):
    """Map policy parameters ``(a, b)`` to the rate-formula pair ``(P(Y=0|q1), P(Y=0|q2))``."""
    pb = 1 - p
    big_b = -(5 * a * a * p * p - 6 * a * a * p + 2 * a * a - 3 * a * b * p * p + 5 * a * b * p
              - 2 * a * b - a * p * p + 2 * a * p - a - b * p * p - b * p + b) / (a * p * (a - 1) * (p - 1))
    return b / a, big_b


def trapdoor_4node_policy_params(p, big_a, big_b):
    """Inverse of :func:`trapdoor_4node_output_params`."""
    num = (-big_a * p * p - big_a * p + big_a - big_b * p * p + big_b * p - p * p + 2 * p - 1)
    den = (3 * big_a * p * p - 5 * big_a * p + 2 * big_a - big_b * p * p + big_b * p
           - 5 * p * p + 6 * p - 2)
    a = num / den
    return a, big_a * a


def _r_t2_admissible(p, big_a, big_b):
    try:
        with np.errstate(all="ignore"):
            a, b = trapdoor_4node_policy_params(p, big_a, big_b)
            _trapdoor_4node(p, a, b)
    except (ValidityError, ZeroDivisionError):
        return False
    return bool(np.isfinite(a) and np.isfinite(b))


def _optimize_r_t2(p):
    # optimise over the output pair; admissibility is checked on the mapped policy
    grid = np.linspace(0.005, 0.995, 100)
    best = None
    for big_a in grid:
        for big_b in grid:
            if _r_t2_admissible(p, big_a, big_b):
                v = r_t2(p, big_a, big_b)
                if best is None or v > best[1]:
                    best = ((big_a, big_b), v)
    if best is None:
        raise ValidityError(f"no admissible (a, b) for R_T2 at p={p}")
    f = lambda x: -r_t2(p, *x) if _r_t2_admissible(p, *x) else 1e3
    res = minimize(f, best[0], method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 4000})
    if -res.fun > best[1]:
        best = (tuple(res.x), -res.fun)
    return tuple(float(v) for v in best[0]), float(best[1])


def _ising_admissible(p, a, b, c):
    # the region is stated as a subset of the valid-policy set; check both
    try:
        _ising_6node(p, a, b, c)
    except (ValidityError, ZeroDivisionError):
        return False
    return True


def _optimize_ising(p):
    grid = np.linspace(0, 1, 41)
    best = None
    with np.errstate(all="ignore"):
        for a in grid[grid >= 0.5]:
            for b in grid[grid >= a]:
                for c in grid[grid <= 0.5]:
                    if _ising_admissible(p, a, b, c):
                        v = r_ising(p, a, b, c)
                        if np.isfinite(v) and (best is None or v > best[1]):
                            best = ((a, b, c), v)
    if best is None:
        raise ValidityError(f"no admissible (a, b, c) at p={p}")
    f = lambda x: -r_ising(p, *x) if _ising_admissible(p, *x) else 1e3
    res = minimize(f, best[0], method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 6000})
    if -res.fun > best[1]:
        best = (tuple(res.x), -res.fun)
    return tuple(float(v) for v in best[0]), float(best[1])


# ---------------------------------------------------------------------------
# encoder registry

@dataclass(frozen=True)
class EncoderSpec:
    id: str
    family: str
    graph: list
    build: Callable
    formula: str
    p_range: tuple                  # (lo, hi, lo_open, hi_open)
    params: tuple = ()
    description: str = ""

    def p_grid(self, n: int) -> np.ndarray:
        """``n`` equally spaced channel parameters inside the validity range."""
        lo, hi, lo_open, hi_open = self.p_range
        m = n + int(lo_open) + int(hi_open)
        grid = np.linspace(lo, hi, m)
        return grid[int(lo_open):m - int(hi_open)]


ENCODERS = {e.id: e for e in [
    EncoderSpec("bfc1_1node", "bfc1", [[0, 0]], _bfc1_1node, "R1_I", (0.0, 0.5, False, False),
                description="single node, optimal for p <= 0.5"),
    EncoderSpec("bfc1_2node", "bfc1", GRAPHS["bfc1_2node"], _bfc1_2node, "R2_I",
                (0.5, 1.0, True, False), ("a",), "two nodes, p > 0.5"),
    EncoderSpec("bfc2_3node", "bfc2", GRAPHS["bfc2_3node"], _bfc2_3node, "R1_II",
                (0.5, 1.0, False, True), description="three nodes, optimal for p >= p*"),
    EncoderSpec("bfc2_6node_r2", "bfc2", GRAPHS["bfc2_6node_r2"], _bfc2_6node_r2, "R2_II",
                (0.0, 0.5, True, False), ("a", "b"), "six nodes, p <= 0.5"),
    EncoderSpec("bfc2_6node_r3", "bfc2", GRAPHS["bfc2_6node_r3"], _bfc2_6node_r3, "R3_II",
                (0.0, 0.5, True, False), ("a",), "six nodes, p <= 0.5"),
    EncoderSpec("ising_6node", "ising", GRAPHS["ising_6node"], _ising_6node, "R_ISING",
                (0.5, 1.0, False, False), ("a", "b", "c"), "six nodes, p >= 0.5"),
    EncoderSpec("trapdoor_3node", "trapdoor", GRAPHS["trapdoor_3node"], _trapdoor_3node, "R_T1",
                (0.0, 0.5, True, True), description="three nodes, p < 0.5"),
    EncoderSpec("trapdoor_4node", "trapdoor", GRAPHS["trapdoor_4node"], _trapdoor_4node, "R_T2",
                (0.5, 1.0, True, True), ("a", "b"), "four nodes, p > 0.5"),
]}

# parameters the rate formula does not see
_RATE_FREE = {"bfc2_6node_r2": {"b": 0.5}, "bfc2_6node_r3": {"a": 0.5}}


# encoders whose policy parameters differ from the formula's: (to_formula, to_policy)
_PARAM_MAPS = {"trapdoor_4node": (trapdoor_4node_output_params, trapdoor_4node_policy_params)}


def encoder_params(eid: str, p: float) -> tuple:
    """Optimised parameters for an encoder, in the order of ``EncoderSpec.params``."""
    spec = ENCODERS[eid]
    if not spec.params:
        return ()
    extra = _RATE_FREE.get(eid, {})
    if set(spec.params) <= set(extra):
        return tuple(extra[k] for k in spec.params)
    opt, _ = optimize_params(spec.formula, p)
    if eid in _PARAM_MAPS:
        return tuple(float(v) for v in _PARAM_MAPS[eid][1](p, *opt))
    opt = dict(zip(FORMULAS[spec.formula].params, opt))
    return tuple(opt.get(k, extra.get(k)) for k in spec.params)


def encoder_policy(eid: str, p: float, params=None) -> InputPolicy:
    spec = ENCODERS[eid]
    params = encoder_params(eid, p) if params is None else tuple(np.atleast_1d(params))
    return spec.build(p, *params)


def builtin_encoder(eid: str, p: float, params=None, tol: float = 1e-9) -> GraphEncoder:
    """Fully specified, certified encoder; ``params=None`` picks the optimised ones."""
    if eid not in ENCODERS:
        raise KeyError(f"unknown encoder {eid!r}; choose from {sorted(ENCODERS)}")
    spec = ENCODERS[eid]
    ch = make_builtin(spec.family, p)
    policy = encoder_policy(eid, p, params)
    return certify_encoder(ch, QGraph(spec.graph, name=eid), policy, tol)


def encoder_rate_formula(eid: str, p: float, params=None) -> float:
    """Closed-form rate matching ``builtin_encoder(eid, p, params)``."""
    spec = ENCODERS[eid]
    params = encoder_params(eid, p) if params is None else tuple(np.atleast_1d(params))
    if eid in _PARAM_MAPS:
        return closed_form_rate(spec.formula, p, _PARAM_MAPS[eid][0](p, *params))
    named = dict(zip(spec.params, params))
    fparams = tuple(named[k] for k in FORMULAS[spec.formula].params)
    return closed_form_rate(spec.formula, p, fparams if fparams else None)


# ---------------------------------------------------------------------------
# thresholds

def bfc2_pstar_function(p):
    pb = 1 - p
    d = 1 - 2 * p * pb
    return (2 + p) * np.log2(2 * p * p / d) + np.log2(2 * pb * pb / d)


def trapdoor_pstar_function(p):
    return (1 + 2 * np.log2(p / (1 - p)) - np.log2((1 - 2 * p) / (1 - p)) - h2(p))


def _bisect(f, lo, hi, tol=1e-10):
    flo = f(lo)
    if flo * f(hi) > 0:
        raise ValueError("endpoints do not bracket a root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_pstar(family: str) -> float:
    if family == "bfc2":
        return _bisect(bfc2_pstar_function, 0.55, 0.99)
    if family == "trapdoor":
        return _bisect(trapdoor_pstar_function, 1e-6, 0.5 - 1e-9)
    raise ValueError(f"no threshold defined for {family!r}")


# ---------------------------------------------------------------------------
# KKT certificate for the upper-bound program

def bfc2_kkt_candidate(p: float) -> np.ndarray:
    """Conjectured maximiser of the BFC-II upper bound on the three-node graph."""
    pb = 1 - p
    D = 2 * p * (2 - p)
    d = np.zeros((2, 3, 2, 2))
    d[0, 0, 0, 0] = 2 * p * pb ** 2 / D
    d[1, 2, 1, 1] = d[0, 0, 0, 0] / 2
    d[0, 0, 0, 1] = 2 * p ** 2 * pb / D
    d[0, 2, 1, 1] = d[0, 0, 0, 1] * p / (2 * pb)
    d[1, 1, 0, 0] = d[1, 1, 1, 1] = 0.5 * p * pb / D
    d[1, 1, 1, 0] = d[1, 1, 0, 1] = 0.5 * p ** 2 / D
    d[0, 2, 1, 0] = d[1, 2, 1, 0] = p ** 2 * pb / D
    return d


def bfc2_kkt_multipliers(p: float) -> tuple[float, float]:
    """Closed-form multipliers of ``d(1,q0,0,0) >= 0`` and ``d(1,q0,1,0) >= 0``."""
    lg = np.log2
    r = 1 - 2 * p * (1 - p)
    mu1 = ((2 * p - 1) * (-(1 + 2 * p) * (1 - lg(r)) - 2 * lg(1 - p) - 4 * p * lg(p))
           / ((1 - p) * (2 - p)))
    mu2 = ((2 * p - 1) * ((p + 3) * (1 - lg(r)) + 2 * lg(1 - p) + 2 * (2 + p) * lg(p))
           / ((p - 2) * p))
    return float(mu1), float(mu2)


@dataclass(frozen=True, eq=False)
class KktReport:
    stationarity_residual: float
    mu: np.ndarray                  # d-space multipliers [s, q, x, y]
    lam: np.ndarray                 # equality multipliers in the reduced system
    min_mu: float
    complementary_slackness_violation: float
    feasibility_residual: float
    unique: bool
    verdict: bool


def kkt_verify(ch: UnifilarChannel, g: QGraph, candidate: np.ndarray, tol: float = 1e-7) -> KktReport:
    """Check first-order optimality of a candidate for the (convex) upper-bound program.

    The program is reduced to ``u(s,q,x) = sum_y d``; a block with ``u = 0`` is
    an active inequality with multiplier ``nu(s,q,x)``.  Equality multipliers
    are chosen by an LP that maximises the smallest active ``nu``, so a
    negative ``min_mu`` means no valid multipliers exist.  In d-space the
    multiplier of a block sits on its first supported output:
    ``mu(s,q,x,y0) = nu / W(y0|x,s)``.
    """
    prob = ReducedProblem(ch, g)
    d = np.asarray(candidate, dtype=float)
    u = prob.from_joint(d)
    recon = prob.to_joint(u)
    feas = float(max(np.abs(prob.A @ u - prob.b).max(), np.abs(recon - d).max(),
                     max(0.0, -u.min())))
    # gradient of f0 = -I in bits
    grad = -prob.gradient(np.maximum(u, 0.0)) / np.log(2.0)
    active = u <= tol
    At = prob.A.T
    free = ~active
    m = At.shape[1]
    # stationarity on inactive blocks: grad + A^T lam = 0
    lam_ls, *_ = np.linalg.lstsq(At[free], -grad[free], rcond=None)
    resid = float(np.abs(At[free] @ lam_ls + grad[free]).max(initial=0.0))
    rank = np.linalg.matrix_rank(At[free]) if free.any() else 0
    rank_all = np.linalg.matrix_rank(prob.A)
    unique = rank == rank_all
    lam = lam_ls
    nu = grad + At @ lam
    if active.any() and not unique:
        # maximise t subject to nu_active >= t, stationarity on inactive blocks
        n_act = int(active.sum())
        c = np.zeros(m + 1)
        c[-1] = -1.0
        A_ub = np.hstack([-At[active], np.ones((n_act, 1))])
        b_ub = grad[active]
        A_eq = np.hstack([At[free], np.zeros((int(free.sum()), 1))])
        b_eq = -grad[free]
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq if free.any() else None,
                      b_eq=b_eq if free.any() else None,
                      bounds=[(None, None)] * m + [(None, 1e3)], method="highs")
        if res.status == 0:
            lam = res.x[:m]
            nu = grad + At @ lam
    nu = np.where(active, nu, 0.0)
    mu = np.zeros(prob.shape)
    for j in np.flatnonzero(active):
        s, q, x = prob.var[j]
        y0 = int(np.flatnonzero(ch.kernel[s, x] > 0)[0])
        mu[s, q, x, y0] = nu[j] / ch.kernel[s, x, y0]
    min_mu = float(nu[active].min()) if active.any() else 0.0
    slack = float(np.abs(nu * u).max(initial=0.0))
    verdict = resid <= tol and min_mu >= -tol and slack <= tol and feas <= tol
    return KktReport(resid, mu, lam, min_mu, slack, feas, bool(unique), bool(verdict))
