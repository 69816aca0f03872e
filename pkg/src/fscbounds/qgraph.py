"""Q-graphs and their coupling with a unifilar channel.

A Q-graph is a deterministic labeled digraph ``g(q, y)``: every node has one
outgoing edge per output symbol.  Walking it along an output sequence maps
the sequence to a node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .channels import UnifilarChannel
from .graphs import closed_classes, period, strong_components

MAX_NODES = 1 << 16


class QGraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QGraph:
    transition: np.ndarray
    name: str = ""

    def __post_init__(self):
        t = np.array(self.transition, dtype=np.int64)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise QGraphError("transition must be a non-empty [q][y] table")
        if np.any(t < 0) or np.any(t >= t.shape[0]):
            raise QGraphError("transition entries must be node indices")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)

    @property
    def node_count(self) -> int:
        return self.transition.shape[0]

    @property
    def output_count(self) -> int:
        return self.transition.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QGraph):
            return NotImplemented
        return np.array_equal(self.transition, other.transition)

    def __hash__(self):
        return hash(self.code())

    def __call__(self, q: int, y: int) -> int:
        return int(self.transition[q, y])

    def code(self) -> tuple:
        return tuple(int(v) for v in self.transition.ravel())

    def label(self) -> str:
        """Compact id, e.g. ``"0,1|2,2|0,1"`` (rows separated by ``|``)."""
        return self.name or "|".join(",".join(str(v) for v in row)
                                     for row in self.transition)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        adj[np.repeat(np.arange(self.node_count), self.output_count),
            self.transition.ravel()] = True
        return adj

    def is_strongly_connected(self) -> bool:
        return strong_components(self.adjacency())[0] == 1

    def is_valid(self) -> bool:
        """Strongly connected with period 1."""
        adj = self.adjacency()
        return strong_components(adj)[0] == 1 and period(adj) == 1

    def to_dict(self) -> dict:
        return {"node_count": self.node_count, "output_count": self.output_count,
                "transition": self.transition.tolist()}


def qgraph_from_dict(doc: dict, name: str = "") -> QGraph:
    try:
        t = np.array(doc["transition"], dtype=np.int64)
        n_q, n_y = int(doc.get("node_count", t.shape[0])), int(doc.get("output_count", t.shape[1]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise QGraphError(f"malformed Q-graph document: {exc}") from exc
    if t.shape != (n_q, n_y):
        raise QGraphError(f"transition shape {t.shape} != ({n_q}, {n_y})")
    return QGraph(t, name=name)


def read_qgraph(path) -> QGraph:
    path = Path(path)
    return qgraph_from_dict(json.loads(path.read_text()), name=f"file:{path.name}")


def markov_qgraph(k: int, output_count: int = 2, max_nodes: int = MAX_NODES) -> QGraph:
    """Graph whose node is the last ``k`` outputs, oldest symbol most significant.

    ``k = 0`` gives the single-node graph.
    """
    if k < 0:
        raise QGraphError("memory length must be non-negative")
    n = output_count ** k
    if n > max_nodes:
        raise QGraphError(f"{output_count}^{k} = {n} nodes exceeds the cap of {max_nodes}")
    q = np.arange(n)[:, None]
    y = np.arange(output_count)[None, :]
    return QGraph((q * output_count + y) % n, name=f"markov:{k}")


def markov_node_history(q: int, k: int, output_count: int = 2) -> tuple[int, ...]:
    digits = []
    for _ in range(k):
        q, r = divmod(q, output_count)
        digits.append(r)
    return tuple(reversed(digits))


def walk(g: QGraph, q0: int, ys: Sequence[int]) -> int:
    if not 0 <= q0 < g.node_count:
        raise QGraphError(f"node {q0} out of range")
    q = q0
    for y in ys:
        if not 0 <= y < g.output_count:
            raise QGraphError(f"output symbol {y} out of range")
        q = int(g.transition[q, y])
    return q


# ---------------------------------------------------------------------------
# enumeration up to node relabeling

def _first_appearance(t: Sequence[int], n_q: int, n_y: int, root: int):
    """Relabel nodes in order of first appearance scanning rows from ``root``.

    Returns the relabeled table as a tuple, or None when ``root`` does not
    reach every node.
    """
    new = {root: 0}
    order = [root]
    i = 0
    while i < len(order):
        u = order[i]
        for y in range(n_y):
            v = t[u * n_y + y]
            if v not in new:
                new[v] = len(order)
                order.append(v)
        i += 1
    if len(order) < n_q:
        return None
    return tuple(new[t[u * n_y + y]] for u in order for y in range(n_y))


def canonical_form(g: QGraph) -> tuple:
    """Canonical transition table of a strongly connected Q-graph.

    Minimum over start nodes of the first-appearance relabeling; two strongly
    connected graphs are equal up to node relabeling iff their forms agree.
    """
    t = g.code()
    forms = [_first_appearance(t, g.node_count, g.output_count, r)
             for r in range(g.node_count)]
    forms = [f for f in forms if f is not None]
    if len(forms) < g.node_count:
        raise QGraphError("canonical_form requires a strongly connected graph")
    return min(forms)


def _normal_tables(n_q: int, n_y: int) -> Iterator[list]:
    """Tables whose node labels already follow first appearance from node 0."""
    cells = n_q * n_y
    table = [0] * cells

    def rec(k, top):
        if k == cells:
            if top == n_q - 1:
                yield table
            return
        if k // n_y > top:  # row of an unreached node
            return
        hi = min(top + 1, n_q - 1)
        for v in range(hi + 1):
            table[k] = v
            yield from rec(k + 1, max(top, v))

    yield from rec(0, 0)


def _is_valid_code(t: Sequence[int], n_q: int, n_y: int) -> bool:
    adj = np.zeros((n_q, n_q), dtype=bool)
    adj[np.repeat(np.arange(n_q), n_y), np.asarray(t)] = True
    return strong_components(adj)[0] == 1 and period(adj) == 1


def enumerate_qgraphs(node_count: int, output_count: int = 2) -> Iterator[QGraph]:
    """Yield one valid graph per node-relabeling class, in lexicographic order."""
    if node_count < 1:
        raise QGraphError("node_count must be >= 1")
    n_q, n_y = node_count, output_count
    for t in _normal_tables(n_q, n_y):
        code = tuple(t)
        if not _is_valid_code(code, n_q, n_y):
            continue
        canonical = True
        for r in range(1, n_q):
            other = _first_appearance(code, n_q, n_y, r)
            if other is not None and other < code:
                canonical = False
                break
        if canonical:
            yield QGraph(np.array(code).reshape(n_q, n_y))


def count_qgraphs(node_count: int, output_count: int = 2) -> int:
    return sum(1 for _ in enumerate_qgraphs(node_count, output_count))


# ---------------------------------------------------------------------------
# coupled (S, Q) graph

@dataclass(frozen=True, eq=False)
class CoupledGraph:
    """Product of a channel's state evolution with a Q-graph.

    Node ``(s, q)`` has flat index ``s * |Q| + q``.  ``edges`` lists every
    supported ``(s, q, x, y, s+, q+)``.
    """

    channel: UnifilarChannel
    qgraph: QGraph
    edges: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.channel.state_count, self.qgraph.node_count

    @property
    def node_count(self) -> int:
        return self.shape[0] * self.shape[1]

    def index(self, s: int, q: int) -> int:
        return s * self.qgraph.node_count + q

    def edge_set(self) -> set:
        return {tuple(int(v) for v in e) for e in self.edges}

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        n_q = self.qgraph.node_count
        e = self.edges
        adj[e[:, 0] * n_q + e[:, 1], e[:, 4] * n_q + e[:, 5]] = True
        return adj

    def transition_matrix(self, policy: np.ndarray) -> np.ndarray:
        """``T[(s,q), (s+,q+)] = sum_{x,y} P(x|s,q) W(y|x,s)`` over matching edges."""
        policy = np.asarray(policy, dtype=float)
        n_q = self.qgraph.node_count
        e = self.edges
        w = policy[e[:, 0], e[:, 1], e[:, 2]] * self.channel.kernel[e[:, 0], e[:, 2], e[:, 3]]
        T = np.zeros((self.node_count, self.node_count))
        np.add.at(T, (e[:, 0] * n_q + e[:, 1], e[:, 4] * n_q + e[:, 5]), w)
        return T


def couple(ch: UnifilarChannel, g: QGraph) -> CoupledGraph:
    if ch.output_count != g.output_count:
        raise QGraphError(
            f"channel has {ch.output_count} outputs but the Q-graph is labeled by {g.output_count}")
    rows = []
    for s, x, y in zip(*np.nonzero(ch.support)):
        sp = ch.next_state[s, x, y]
        for q in range(g.node_count):
            rows.append((s, q, x, y, sp, g.transition[q, y]))
    edges = np.array(sorted(rows), dtype=np.int64).reshape(-1, 6)
    edges.setflags(write=False)
    return CoupledGraph(ch, g, edges)


@dataclass(frozen=True)
class CoupledValidity:
    single_closed_class: bool
    aperiodic: bool
    closed_classes: tuple

    @property
    def ok(self) -> bool:
        return self.single_closed_class and self.aperiodic


def validity_of_adjacency(adj: np.ndarray) -> CoupledValidity:
    classes = closed_classes(adj)
    single = len(classes) == 1
    aperiodic = all(period(adj, c) == 1 for c in classes)
    return CoupledValidity(single, aperiodic, tuple(tuple(int(i) for i in c) for c in classes))


def validate_coupled(cg: CoupledGraph) -> CoupledValidity:
    """Closed-class structure of the coupled graph with every support edge present."""
    return validity_of_adjacency(cg.adjacency())
