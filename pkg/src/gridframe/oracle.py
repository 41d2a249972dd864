"""Noiseless-limit iterative estimation and attack-impact prediction.

As the noise scale goes to zero the loop runs on the attack vector alone
with shape-only weights, and "bad data" means any nonzero residual. Ties in
the largest normalized residual are explored exhaustively: the reachable
states form a DAG keyed by the set of removed rows (the estimate after a
removal depends only on which rows remain, not on their order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dcmodel import LinearModel, UnobservableError
from .estimator import CRITICAL_TOL, UnidentifiableBadData, _normalize, fit_linear, identify_worst
from .netmodel import GridNetwork
from .observability import null_space_basis


class OracleError(RuntimeError):
    def __init__(self, message: str, result: "OracleResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class _Node:
    estimate: np.ndarray | None
    status: str                      # "open", "final", "infeasible", "unidentifiable"
    children: tuple[int, ...] = ()   # rows tied for removal


@dataclass
class OracleResult:
    nodes: dict
    leaves: list
    final_estimates: list
    truncated: bool
    m: int
    _count: dict = field(default_factory=dict, repr=False)

    @property
    def condition_holds(self) -> bool:
        return (not self.truncated and len(self.final_estimates) == 1
                and all(self.nodes[r].status == "final" for r in self.leaves))

    @property
    def y(self) -> np.ndarray | None:
        return self.final_estimates[0] if self.condition_holds else None

    @property
    def verdict(self) -> str:
        if self.truncated:
            return "unknown"
        return "true" if self.condition_holds else "false"

    @property
    def branch_count(self) -> int:
        """Number of distinct removal sequences (tie decisions) reachable."""
        def count(R):
            if R not in self._count:
                node = self.nodes.get(R)
                if node is None or not node.children:
                    self._count[R] = 1
                else:
                    self._count[R] = sum(count(R | {c}) for c in node.children)
            return self._count[R]
        return count(frozenset())

    def removal_sequences(self, limit: int = 4096) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []

        def walk(R, seq):
            if len(out) >= limit:
                return
            node = self.nodes.get(R)
            if node is None or not node.children:
                out.append(tuple(seq))
                return
            for c in node.children:
                walk(R | {c}, seq + [c])

        walk(frozenset(), [])
        return out

    def contains_sequence(self, rows) -> bool:
        """Whether a realized removal sequence (row indices) is one the oracle allows."""
        R = frozenset()
        for r in rows:
            node = self.nodes.get(R)
            if node is None or r not in node.children:
                return False
            R = R | {r}
        node = self.nodes.get(R)
        return node is not None and node.status == "final"

    def report(self, net: GridNetwork | None = None, layout=None) -> str:
        lab = (lambda r: net.label(layout.meters[r])) if net is not None else str
        lines = [f"verdict={self.verdict} branches={self.branch_count} "
                 f"leaves={len(self.leaves)} truncated={self.truncated}"]
        for seq in self.removal_sequences(64):
            lines.append("sequence: " + (" ".join(lab(r) for r in seq) or "(none)"))
        for k, est in enumerate(self.final_estimates):
            lines.append(f"final[{k}]: " + " ".join(f"{v:.6g}" for v in est))
        return "\n".join(lines)


def noiseless_iterative_se(model: LinearModel, a: np.ndarray, *, max_branches: int = 64,
                           zero_rtol: float = 1e-9, tie_rtol: float = 1e-9,
                           dedup_tol: float = 1e-8) -> OracleResult:
    """Run the zero-noise loop on attack ``a``, branching on every tie.

    ``max_branches`` caps the number of distinct terminal removal sets; when
    exceeded the result is marked truncated and its verdict is "unknown".
    """
    a = np.asarray(a, float)
    H, sb = model.H, model.sigma_bar
    eps = zero_rtol * float(np.sum(a ** 2 / sb))
    all_rows = np.arange(model.m)
    nodes: dict[frozenset, _Node] = {}
    leaves: list[frozenset] = []
    truncated = False
    stack = [frozenset()]
    while stack:
        R = stack.pop()
        if R in nodes:
            continue
        active = all_rows[~np.isin(all_rows, list(R))] if R else all_rows
        try:
            fit = fit_linear(H[active], sb[active], a[active])
        except UnobservableError:
            nodes[R] = _Node(None, "infeasible")
            leaves.append(R)
        else:
            if fit.j_statistic() <= eps:
                nodes[R] = _Node(fit.estimate, "final")
                leaves.append(R)
            else:
                rel = 1.0 - fit.leverage
                rn = _normalize(fit.residual, rel, sb[active], rel < CRITICAL_TOL)
                try:
                    ties = identify_worst(rn, tie_rtol)
                except UnidentifiableBadData:
                    nodes[R] = _Node(fit.estimate, "unidentifiable")
                    leaves.append(R)
                else:
                    kids = tuple(int(active[t]) for t in ties)
                    nodes[R] = _Node(fit.estimate, "open", kids)
                    stack.extend(R | {c} for c in reversed(kids))
        if len(leaves) > max_branches:
            truncated = True
            break

    finals: list[np.ndarray] = []
    for R in leaves:
        node = nodes[R]
        if node.status != "final":
            continue
        if not any(np.max(np.abs(node.estimate - f)) <= dedup_tol for f in finals):
            finals.append(node.estimate)
    return OracleResult(nodes, leaves, finals, truncated, model.m)


# ---------------------------------------------------------------------------
# critical-set partitions and the factor-of-two condition
# ---------------------------------------------------------------------------

@dataclass
class Partition:
    s1: list
    s2: list
    delta_x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray

    @property
    def attack_s1(self) -> np.ndarray:
        """H1 dx: nonzero only on S1."""
        return self.h1 @ self.delta_x

    @property
    def attack_s2(self) -> np.ndarray:
        return self.h2 @ self.delta_x


def _unit_sign(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if nz.size and v[nz[0]] < 0 else v


def make_partition(model: LinearModel, s1, s2) -> Partition:
    s1, s2 = list(dict.fromkeys(s1)), list(dict.fromkeys(s2))
    if set(s1) & set(s2):
        raise ValueError("partition halves overlap")
    r1, r2 = model.rows(s1), model.rows(s2)
    keep = np.setdiff1d(np.arange(model.m), np.union1d(r1, r2))
    N = null_space_basis(model.H[keep])
    if N.shape[1] != 1:
        raise ValueError(f"S1 ∪ S2 leaves a {N.shape[1]}-dimensional null space; "
                         "expected a critical set")
    dx = _unit_sign(N[:, 0])
    h1 = model.H.copy()
    h1[r2] = 0.0
    h2 = model.H.copy()
    h2[r1] = 0.0
    return Partition(s1, s2, dx, h1, h2)


@dataclass
class HalfPartitionCheck:
    condition: bool | None       # None when exploration was truncated
    y: np.ndarray | None
    complement: np.ndarray | None
    result: OracleResult


def check_half_partition(model: LinearModel, partition: Partition, **kw) -> HalfPartitionCheck:
    """Run the oracle on H1 dx; the condition is a unique final estimate y."""
    res = noiseless_iterative_se(model, partition.attack_s1, **kw)
    if res.truncated:
        return HalfPartitionCheck(None, None, None, res)
    if not res.condition_holds:
        return HalfPartitionCheck(False, None, None, res)
    y = res.y
    return HalfPartitionCheck(True, y, partition.delta_x - y, res)


def partition_prediction(model: LinearModel, partition: Partition, eta: float,
                         adversary: str = "s1") -> np.ndarray:
    """Predicted shift for a = eta * H_k dx with S_k as the adversary set."""
    chk = check_half_partition(model, partition)
    if not chk.condition:
        raise OracleError(f"factor-of-two condition is {chk.result.verdict}", chk.result)
    if adversary == "s1":
        return eta * chk.y
    if adversary == "s2":
        return eta * chk.complement
    raise ValueError("adversary must be 's1' or 's2'")


def predict_perturbation(model: LinearModel, s_adversary, s_framed, eta: float,
                         direction: np.ndarray | None = None) -> np.ndarray:
    """eta times the oracle's final estimate on the unit framing direction."""
    if direction is None:
        from .attack import framing_direction
        direction = framing_direction(model, s_adversary, s_framed).direction
    if eta == 0:
        return np.zeros(model.state_dim)
    res = noiseless_iterative_se(model, direction)
    if not res.condition_holds:
        raise OracleError(f"oracle outcome not unique (verdict {res.verdict})", res)
    return eta * res.y


def orient_plan(model: LinearModel, plan, target: np.ndarray) -> float:
    """Set the sign of ``plan.eta`` so the predicted shift points along ``target``.

    Returns the inner product of the unit-magnitude prediction with ``target``.
    """
    res = noiseless_iterative_se(model, plan.direction)
    if not res.condition_holds:
        raise OracleError(f"oracle outcome not unique (verdict {res.verdict})", res)
    score = float(res.y @ np.asarray(target, float))
    sign = -1.0 if score < 0 else 1.0
    plan.eta = sign * abs(plan.eta)
    return sign * score
