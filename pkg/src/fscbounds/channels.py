"""Unifilar finite-state channels.

A channel is a kernel ``W[s, x, y] = P(y | x, s)`` together with a
deterministic next-state table ``f[s, x, y]``.  Entries of ``f`` where the
kernel vanishes may be ``IMPOSSIBLE`` (-1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMPOSSIBLE = -1
ROW_SUM_TOL = 1e-12
FAMILIES = ("bfc1", "bfc2", "ising", "trapdoor")


class ChannelError(ValueError):
    """Raised for malformed or non-unifilar channel descriptions."""


@dataclass(frozen=True, eq=False)
class UnifilarChannel:
    kernel: np.ndarray
    next_state: np.ndarray
    name: str = "channel"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        nxt = np.array(self.next_state, dtype=np.int64)
        if kernel.ndim != 3:
            raise ChannelError("kernel must be indexed [s][x][y]")
        if nxt.shape != kernel.shape:
            raise ChannelError(
                f"next_state shape {nxt.shape} does not match kernel {kernel.shape}")
        if np.any(kernel < 0) or np.any(kernel > 1):
            raise ChannelError("kernel entries must lie in [0, 1]")
        sums = kernel.sum(axis=2)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            s, x = np.argwhere(bad)[0]
            raise ChannelError(
                f"row sum of W(.|x={x},s={s}) is {sums[s, x]!r}, expected 1")
        n_states = kernel.shape[0]
        support = kernel > 0
        if np.any(support & ((nxt < 0) | (nxt >= n_states))):
            s, x, y = np.argwhere(support & ((nxt < 0) | (nxt >= n_states)))[0]
            raise ChannelError(f"next_state undefined on support at (s={s}, x={x}, y={y})")
        nxt = np.where(support | ((nxt >= 0) & (nxt < n_states)), nxt, IMPOSSIBLE)
        kernel.setflags(write=False)
        nxt.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "next_state", nxt)

    @property
    def state_count(self) -> int:
        return self.kernel.shape[0]

    @property
    def input_count(self) -> int:
        return self.kernel.shape[1]

    @property
    def output_count(self) -> int:
        return self.kernel.shape[2]

    @property
    def support(self) -> np.ndarray:
        return self.kernel > 0

    def __eq__(self, other):
        if not isinstance(other, UnifilarChannel):
            return NotImplemented
        if self.kernel.shape != other.kernel.shape:
            return False
        supp = self.support
        return (np.array_equal(self.kernel, other.kernel)
                and np.array_equal(np.where(supp, self.next_state, IMPOSSIBLE),
                                   np.where(supp, other.next_state, IMPOSSIBLE)))

    __hash__ = None

    def to_dict(self) -> dict:
        supp = self.support
        return {
            "name": self.name,
            "alphabets": {"S": self.state_count, "X": self.input_count,
                          "Y": self.output_count},
            "kernel": self.kernel.tolist(),
            "next_state": np.where(supp, self.next_state, IMPOSSIBLE).tolist(),
        }


def make_builtin(family: str, p: float) -> UnifilarChannel:
    """Return one of the binary channels ``bfc1``, ``bfc2``, ``ising``, ``trapdoor``.

    The fading channels output ``y = (s*x) xor n`` with ``n ~ Ber(p)``; type I
    moves to ``s xor x xor y`` and type II to ``s xor n``.  Ising and trapdoor
    emit the stored bit ``s`` with probability ``p`` and the new bit ``x``
    otherwise; Ising keeps ``x`` as the next state, trapdoor the remaining bit
    ``s xor x xor y``.
    """
    if family not in FAMILIES:
        raise ChannelError(f"unknown channel family {family!r}; expected one of {FAMILIES}")
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ChannelError(f"p must lie in [0, 1], got {p}")

    kernel = np.zeros((2, 2, 2))
    nxt = np.zeros((2, 2, 2), dtype=np.int64)
    for s in range(2):
        for x in range(2):
            for y in range(2):
                if family in ("bfc1", "bfc2"):
                    n = y ^ (s & x)
                    kernel[s, x, y] = p if n else 1.0 - p
                    nxt[s, x, y] = s ^ x ^ y if family == "bfc1" else s ^ n
                else:
                    kernel[s, x, y] = p * (y == s) + (1.0 - p) * (y == x)
                    nxt[s, x, y] = x if family == "ising" else s ^ x ^ y
    return UnifilarChannel(kernel, nxt, name=family, params={"p": p})


def _next_state_entry(value, where):
    if isinstance(value, list):
        values = {int(v) for v in value if int(v) != IMPOSSIBLE}
        if len(values) > 1:
            raise ChannelError(f"non-unifilar channel: next states {sorted(values)} at {where}")
        return values.pop() if values else IMPOSSIBLE
    return int(value)


def channel_from_dict(doc: dict) -> UnifilarChannel:
    try:
        alph = doc["alphabets"]
        n_s, n_x, n_y = int(alph["S"]), int(alph["X"]), int(alph["Y"])
        kernel = np.array(doc["kernel"], dtype=float)
        raw = doc["next_state"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ChannelError(f"malformed channel document: {exc}") from exc
    if kernel.shape != (n_s, n_x, n_y):
        raise ChannelError(f"kernel shape {kernel.shape} != alphabets {(n_s, n_x, n_y)}")
    nxt = np.full((n_s, n_x, n_y), IMPOSSIBLE, dtype=np.int64)
    try:
        for s in range(n_s):
            for x in range(n_x):
                for y in range(n_y):
                    nxt[s, x, y] = _next_state_entry(raw[s][x][y], (s, x, y))
    except (IndexError, TypeError) as exc:
        raise ChannelError(f"next_state is not a dense [S][X][Y] array: {exc}") from exc
    return UnifilarChannel(kernel, nxt, name=str(doc.get("name", "channel")))


def load_channel(text: str) -> UnifilarChannel:
    """Parse a JSON channel document (see ``UnifilarChannel.to_dict``)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChannelError(f"channel file is not valid JSON: {exc}") from exc
    return channel_from_dict(doc)


def read_channel(path) -> UnifilarChannel:
    return load_channel(Path(path).read_text())


def dump_channel(ch: UnifilarChannel) -> str:
    return json.dumps(ch.to_dict(), indent=2)


def state_graph(ch: UnifilarChannel) -> np.ndarray:
    """Boolean adjacency ``A[s, s']`` of one-step reachable states."""
    adj = np.zeros((ch.state_count, ch.state_count), dtype=bool)
    s, x, y = np.nonzero(ch.support)
    adj[s, ch.next_state[s, x, y]] = True
    return adj


def is_strongly_connected(ch: UnifilarChannel) -> bool:
    from .graphs import strongly_connected

    return strongly_connected(state_graph(ch))
