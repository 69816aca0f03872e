"""Posterior-matching transmission driven by a graph-based encoder.

The message set is the unit interval cut into ``M`` equal cells.  Each message
keeps one posterior mass per channel state it may be in, so the posterior is
an array ``lam[m, s]``.  Within a state the messages are laid out in index
order and rescaled by ``pi(s|q)``; an input symbol is assigned to every piece
of that layout by the inverse CDF of ``P(x|s,q)``.  Pieces that straddle a CDF
boundary are split, which keeps the mass on each ``(s, x)`` exactly equal to
``pi(s|q) P(x|s,q)`` and makes the posterior update a plain Bayes step.

The true message is a point drawn uniformly from the prior measure.  Its
information gain per step is ``log2(W(y|x*,s*) / P(y|q))``, the growth of the
posterior density at that point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channels import UnifilarChannel
from .lower import GraphEncoder, certify_encoder

NORMALIZATION_TOL = 1e-9
BAYES_TOL = 1e-12


class SimulationError(RuntimeError):
    """A step reached a state the stationary law gives zero weight."""


@dataclass(eq=False)
class Transcript:
    q: np.ndarray
    y: np.ndarray
    x: np.ndarray
    state: np.ndarray
    lambda_before: np.ndarray       # posterior mass of the true message
    lambda_after: np.ndarray
    log_growth: np.ndarray          # bits gained at the true point
    normalization_error: np.ndarray  # |sum(lam+) - 1| per step, before drift removal
    bayes_gap: np.ndarray           # max |update rule - Bayes step| per step
    true_message: int
    decoded: int
    message_count: int
    flags: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.y)

    @property
    def success(self) -> bool:
        return self.decoded == self.true_message

    def rows(self):
        for i in range(self.steps):
            yield (i, int(self.q[i]), int(self.y[i]), float(self.lambda_after[i]),
                   float(self.log_growth[i]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "q", "y", "lambda_true", "log_growth"])
            for row in self.rows():
                w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4])])


def empirical_rate(t: Transcript) -> float:
    """Mean information gain per channel use in bits."""
    if t.steps == 0:
        raise ValueError("empty transcript")
    return float(t.log_growth.mean())


def _check_encoder(enc: GraphEncoder, ch: UnifilarChannel) -> GraphEncoder:
    # always re-certify against the channel actually simulated
    return certify_encoder(ch, enc.qgraph, enc.policy)


def simulate(enc: GraphEncoder, ch: UnifilarChannel, message_count: int, horizon: int,
             seed=None) -> Transcript:
    """Run ``horizon`` channel uses of the scheme for ``message_count`` messages."""
    if message_count < 1:
        raise ValueError("message_count must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    enc = _check_encoder(enc, ch)
    rng = np.random.Generator(np.random.Philox(seed))

    W, f = ch.kernel, ch.next_state
    g = enc.qgraph.transition
    table = enc.policy.table
    n_s, n_x, n_y = ch.state_count, ch.input_count, ch.output_count
    M = message_count

    beta = enc.pi.state_given_node()                   # [s, q]
    pyq = np.einsum("sq,sqx,sxy->qy", beta, table, W)  # P(y|q)
    cdf = np.cumsum(table, axis=2)                     # [s, q, x]
    lo_edge = np.concatenate([np.zeros((n_s, table.shape[1], 1)), cdf[:, :, :-1]], axis=2)
    hi_edge = cdf.copy()
    hi_edge[:, :, -1] = np.inf                         # last input absorbs rounding
    # one-hot routing of (s, x) to the next state for every output
    route = np.zeros((n_y, n_s * n_x, n_s))
    for s in range(n_s):
        for x in range(n_x):
            for y in range(n_y):
                if W[s, x, y] > 0:
                    route[y, s * n_x + x, f[s, x, y]] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(pyq[:, None, None, :] > 0,
                          W[None] / pyq[:, None, None, :], 0.0)  # [q, s, x, y]
    w_cdf = np.cumsum(W, axis=2)

    q = int(rng.choice(len(enc.pi.pi_q), p=enc.pi.pi_q))
    lam = np.outer(np.full(M, 1.0 / M), beta[:, q])    # [m, s]
    m_true = int(rng.integers(M))
    s_true = int(rng.choice(n_s, p=beta[:, q]))
    offset = rng.random() * lam[m_true, s_true]        # position inside its cell
    draws = rng.random(horizon)

    rec_q = np.empty(horizon, dtype=np.int64)
    rec_y = np.empty(horizon, dtype=np.int64)
    rec_x = np.empty(horizon, dtype=np.int64)
    rec_s = np.empty(horizon, dtype=np.int64)
    lam_before = np.empty(horizon)
    lam_after = np.empty(horizon)
    growth = np.empty(horizon)
    norm_err = np.empty(horizon)
    bayes_gap = np.empty(horizon)
    flags = []

    for t in range(horizon):
        b = beta[:, q]
        if b[s_true] <= 0:
            raise SimulationError(f"step {t}: pi(s={s_true}|q={q}) is zero")
        stray = (b <= 0) & (lam.sum(axis=0) > 0)
        if stray.any():
            flags.append((t, "mass on zero-probability state"))
        scale = np.where(b > 0, b, 1.0)
        top = np.cumsum(lam, axis=0) / scale            # cell upper ends, normalised
        bottom = top - lam / scale
        lo, hi = lo_edge[:, q, :], hi_edge[:, q, :]     # [s, x]
        piece = np.minimum(top[:, :, None], hi[None]) - np.maximum(bottom[:, :, None], lo[None])
        piece = np.clip(piece, 0.0, None) * b[None, :, None]   # [m, s, x]

        u = bottom[m_true, s_true] + offset / b[s_true]
        x_true = int(np.searchsorted(cdf[s_true, q], u, side="right"))
        x_true = min(x_true, n_x - 1)
        y = int(np.searchsorted(w_cdf[s_true, x_true], draws[t], side="right"))
        y = min(y, n_y - 1)
        while W[s_true, x_true, y] <= 0:                # guard against rounding at edges
            y -= 1

        ratio = ratios[q, :, :, y]                      # [s, x]
        moved = (piece * ratio[None]).reshape(M, -1)
        new_lam = moved @ route[y]

        total = new_lam.sum()
        bayes = new_lam / total * lam.sum()            # Bayes step, mass conserved
        bayes_gap[t] = np.abs(new_lam - bayes).max()
        norm_err[t] = abs(total - 1.0)

        s_next = int(f[s_true, x_true, y])
        # offset of the true point inside its new cell; pieces are stacked in (s, x) order
        inside = (u - max(bottom[m_true, s_true], lo[s_true, x_true])) * b[s_true]
        k = s_true * n_x + x_true
        new_offset = moved[m_true, :k] @ route[y, :k, s_next] + inside * ratio[s_true, x_true]

        rec_q[t], rec_y[t], rec_x[t], rec_s[t] = q, y, x_true, s_true
        lam_before[t] = lam[m_true].sum()
        lam_after[t] = new_lam[m_true].sum()
        growth[t] = np.log2(ratio[s_true, x_true])

        q = int(g[q, y])
        # BCJR invariance puts exactly pi(s|q+) on each state; remove rounding drift
        mass = new_lam.sum(axis=0)
        target = beta[:, q]
        drift = float(np.abs(mass - target).max())
        if drift > NORMALIZATION_TOL:
            flags.append((t, f"state masses off the stationary law by {drift:.3g}"))
        fix = np.divide(target, mass, out=np.ones_like(mass), where=mass > 0)
        lam = new_lam * fix[None, :]
        offset = min(new_offset * fix[s_next], lam[m_true, s_next])
        s_true = s_next

    decoded = int(np.argmax(lam.sum(axis=1)))
    return Transcript(rec_q, rec_y, rec_x, rec_s, lam_before, lam_after, growth, norm_err,
                      bayes_gap, m_true, decoded, M, flags)


def rate_trials(enc: GraphEncoder, ch: UnifilarChannel, message_count: int, horizon: int,
                trials: int, seed=0) -> dict:
    """Independent runs with seeds ``seed, seed+1, ...``; returns summary statistics."""
    rates, ok, worst = [], 0, 0.0
    for i in range(trials):
        tr = simulate(enc, ch, message_count, horizon, seed=seed + i)
        rates.append(empirical_rate(tr))
        ok += tr.success
        worst = max(worst, float(tr.normalization_error.max()))
    rates = np.asarray(rates)
    stderr = float(rates.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return {"mean": float(rates.mean()), "stderr": stderr, "rates": rates,
            "success": ok / trials, "normalization_error": worst}
