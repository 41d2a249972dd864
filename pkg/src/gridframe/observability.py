"""Observability, critical meter sets, and cut discovery by random contraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dcmodel import LinearModel, numerical_rank, rank_tol
from .netmodel import GridNetwork, Injection, LineFlow, MeterId, MeterLayout


def is_observable(H_sub: np.ndarray, n: int | None = None) -> bool:
    n = H_sub.shape[1] if n is None else n
    if H_sub.shape[0] == 0:
        return False
    return numerical_rank(H_sub) == n


def rank_without(model: LinearModel, meters: Iterable[MeterId]) -> int:
    keep = np.setdiff1d(np.arange(model.m), model.rows(meters))
    return numerical_rank(model.H[keep])


def is_critical_set(S: Iterable[MeterId], model: LinearModel) -> bool:
    """Removal of S breaks observability and removal of any S minus one meter does not."""
    S = list(dict.fromkeys(S))
    if not S:
        return False
    n = model.state_dim
    if rank_without(model, S) == n:
        return False
    return all(rank_without(model, S[:k] + S[k + 1:]) == n for k in range(len(S)))


def null_space_basis(H_bar: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of N(H_bar) from the SVD."""
    m, n = H_bar.shape
    if m == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(H_bar)
    r = int(np.sum(s > rank_tol(s, n)))
    return Vt[r:].T.copy()


# ---------------------------------------------------------------------------
# cuts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cut:
    side_a: frozenset
    side_b: frozenset
    cut_set: tuple[int, ...]     # line indices crossing the cut

    @classmethod
    def from_side(cls, net: GridNetwork, side) -> "Cut":
        side = frozenset(side)
        other = frozenset(range(net.n_buses)) - side
        if not side or not other:
            raise ValueError("both sides of a cut must be nonempty")
        # canonical orientation: side_a holds the reference bus
        if net.reference_bus not in side:
            side, other = other, side
        crossing = tuple(k for k, ln in enumerate(net.lines)
                         if (ln.from_bus in side) != (ln.to_bus in side))
        return cls(side, other, crossing)

    def sides_connected(self, net: GridNetwork) -> bool:
        return net.subnetwork_connected(self.side_a) and net.subnetwork_connected(self.side_b)


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i


def contract_once(n: int, edges: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Karger contraction down to two super-vertices; returns a side label per bus.

    Contracting edges in a uniformly random order (skipping self loops) is
    the same process as repeatedly picking a uniform random multigraph edge.
    """
    uf = _UnionFind(n)
    groups = n
    for k in rng.permutation(len(edges)):
        a, b = uf.find(int(edges[k, 0])), uf.find(int(edges[k, 1]))
        if a != b:
            uf.parent[a] = b
            groups -= 1
            if groups == 2:
                break
    return np.array([uf.find(i) for i in range(n)])


def find_cuts_contraction(net: GridNetwork, runs: int, rng_seed=None) -> list[Cut]:
    """Distinct cuts from ``runs`` independent contractions, in discovery order."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rng = np.random.default_rng(rng_seed)
    edges = np.array([(ln.from_bus, ln.to_bus) for ln in net.lines])
    seen: dict[frozenset, Cut] = {}
    for _ in range(runs):
        roots = contract_once(net.n_buses, edges, rng)
        side = frozenset(np.flatnonzero(roots == roots[net.reference_bus]).tolist())
        if side not in seen:
            seen[side] = Cut.from_side(net, side)
    return list(seen.values())


def critical_set_from_cut(cut: Cut, net: GridNetwork, layout: MeterLayout | None = None) -> list[MeterId]:
    """Flow meters (both directions) on cut-set lines plus injections at their endpoints."""
    if not cut.sides_connected(net):
        raise ValueError("cut side is disconnected; cut meters need not be critical")
    flows: list[MeterId] = []
    ends: set[int] = set()
    for k in cut.cut_set:
        ln = net.lines[k]
        flows += [LineFlow(ln.from_bus, ln.to_bus), LineFlow(ln.to_bus, ln.from_bus)]
        ends.update((ln.from_bus, ln.to_bus))
    meters = [Injection(b) for b in sorted(ends)] + flows
    if layout is not None:
        meters = [m for m in meters if m in layout]
    return meters


@dataclass(frozen=True)
class HalfPartition:
    s1: tuple
    s2: tuple
    within_bound: bool


def half_partition(S: Iterable[MeterId], cut: Cut, net: GridNetwork) -> HalfPartition:
    """Split S so S1 holds the flow meters of a prefix of the cut-set lines.

    Lines are taken in index order until ||S1| - |S|/2| <= 1.
    """
    S = list(S)
    members = set(S)
    half = len(S) / 2.0
    s1: list[MeterId] = []
    best = list(s1)
    for k in cut.cut_set:
        if abs(len(s1) - half) <= 1:
            break
        ln = net.lines[k]
        s1 += [m for m in (LineFlow(ln.from_bus, ln.to_bus), LineFlow(ln.to_bus, ln.from_bus))
               if m in members]
        if abs(len(s1) - half) < abs(len(best) - half):
            best = list(s1)
    if abs(len(s1) - half) > 1:
        s1 = best
    chosen = set(s1)
    s2 = [m for m in S if m not in chosen]
    return HalfPartition(tuple(s1), tuple(s2), abs(len(s1) - half) <= 1)


def cut_listing(net: GridNetwork, model: LinearModel, cuts: list[Cut]) -> str:
    """One line per cut: side sizes, cut-set lines, meter set, criticality, S1 | S2."""
    out = []
    for c in cuts:
        S = critical_set_from_cut(c, net, model.layout)
        part = half_partition(S, c, net)
        lines = ",".join(f"{net.buses[net.lines[k].from_bus].name}-"
                         f"{net.buses[net.lines[k].to_bus].name}" for k in c.cut_set)
        out.append(
            f"sides={len(c.side_a)}/{len(c.side_b)} lines={lines} "
            f"meters={','.join(net.label(m) for m in S)} critical={is_critical_set(S, model)} "
            f"s1={','.join(net.label(m) for m in part.s1)} "
            f"s2={','.join(net.label(m) for m in part.s2)}")
    return "\n".join(out)
