"""Framing-attack synthesis, plus covert and conservative baseline attacks.

A framing attack lives in R(H0) ∩ A: it is nonzero only on adversary meters
and becomes consistent with a shifted state once the framed meters are
dropped. Among those directions it maximizes the energy of the normalized
residuals on the framed meters, a quadratic ratio solved as an eigenproblem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.stats import ncx2

from .dcmodel import LinearModel
from .estimator import chi2_threshold, residual_ops
from .netmodel import GridNetwork, MeterId
from .observability import null_space_basis


class AttackError(ValueError):
    pass


class NoFramingAttack(AttackError):
    """Raised when R(H0) ∩ A is {0} for the given adversary/framed sets."""


def canonical_sign(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip ``v`` so its entries sum to a positive value.

    Falls back to making the first significant entry positive when the sum
    vanishes. Eigen- and null-space solvers return vectors of arbitrary sign.
    """
    s = v.sum()
    scale = np.abs(v).max() if v.size else 0.0
    if abs(s) > tol * max(scale, 1e-300) * v.size:
        return v if s > 0 else -v
    nz = np.flatnonzero(np.abs(v) > tol * scale)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _check_sets(model: LinearModel, s_adversary, s_framed):
    A = list(dict.fromkeys(s_adversary))
    F = list(dict.fromkeys(s_framed))
    if not A:
        raise AttackError("adversary set is empty")
    if set(A) & set(F):
        raise AttackError("adversary and framed sets overlap")
    return A, F, model.rows(A), model.rows(F)


def feasible_basis(model: LinearModel, s_adversary, s_framed) -> np.ndarray:
    """Orthonormal basis (m x p) of R(H0) ∩ A."""
    _, _, ra, rf = _check_sets(model, s_adversary, s_framed)
    drop = np.union1d(ra, rf)
    keep = np.setdiff1d(np.arange(model.m), drop)
    N = null_space_basis(model.H[keep])
    if N.shape[1] == 0:
        raise NoFramingAttack("no framing attack exists for this (S_A, S_F): "
                              "removing both sets keeps the network observable")
    H0 = model.H.copy()
    H0[rf] = 0.0
    B0 = H0 @ N
    U, s, _ = np.linalg.svd(B0, full_matrices=False)
    p = int(np.sum(s > max(B0.shape) * s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    if p == 0:
        raise NoFramingAttack("no framing attack exists: H0 vanishes on N(H_bar)")
    B = U[:, :p]
    B[np.setdiff1d(np.arange(model.m), ra)] = 0.0
    return B


@dataclass
class AttackPlan:
    s_adversary: list
    s_framed: list
    direction: np.ndarray
    objective_value: float
    feasible_dim: int
    eta: float = 1.0
    multiplier: float = 0.0
    degenerate: bool = False

    def vector(self) -> np.ndarray:
        return self.eta * self.direction

    def to_json(self, net: GridNetwork, model: LinearModel) -> str:
        rows = model.rows(self.s_adversary)
        return json.dumps({
            "adversary": [net.label(m) for m in self.s_adversary],
            "framed": [net.label(m) for m in self.s_framed],
            "direction": {net.label(model.layout.meters[r]): float(self.direction[r]) for r in rows},
            "eta": self.eta,
            "objective": self.objective_value,
            "feasible_dim": self.feasible_dim,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str, net: GridNetwork, model: LinearModel) -> "AttackPlan":
        d = json.loads(text)
        direction = np.zeros(model.m)
        for label, v in d["direction"].items():
            direction[model.layout.row(net.meter(label))] = v
        return cls(net.meters(d["adversary"]), net.meters(d["framed"]), direction,
                   float(d["objective"]), int(d["feasible_dim"]), float(d["eta"]),
                   degenerate=float(d["objective"]) == 0.0)


def framing_objective_matrix(model: LinearModel, s_framed) -> np.ndarray:
    """M = R_F Omega W, so the objective is ||M a||^2."""
    ops = residual_ops(model.H, model.sigma, 0.04)
    rf = model.rows(s_framed)
    return (ops.omega[:, None] * ops.W)[rf]


def framing_direction(model: LinearModel, s_adversary, s_framed) -> AttackPlan:
    """Unit direction a* maximizing ||R_F Omega W a||^2 over R(H0) ∩ A.

    With P = -(MB)'(MB) and Q = B'B, stationary points satisfy
    P q + lam Q q = 0. Solved through the Cholesky factor of Q as a
    symmetric eigenproblem; the optimum takes the largest multiplier lam,
    which equals the objective value.
    """
    A, F, _, _ = _check_sets(model, s_adversary, s_framed)
    B = feasible_basis(model, A, F)
    M = framing_objective_matrix(model, F) @ B
    P = -(M.T @ M)
    Q = B.T @ B
    L = np.linalg.cholesky(Q)
    Linv = sla.solve_triangular(L, np.eye(Q.shape[0]), lower=True)
    mu, V = np.linalg.eigh(Linv @ (-P) @ Linv.T)
    lam = float(mu[-1])
    q = Linv.T @ V[:, -1]
    q = q / np.sqrt(q @ Q @ q)
    a = B @ q
    a = canonical_sign(a / np.linalg.norm(a))
    objective = float(np.sum((framing_objective_matrix(model, F) @ a) ** 2))
    degenerate = objective <= 1e-12 * max(1.0, np.abs(P).max())
    return AttackPlan(A, F, a, objective, B.shape[1], 1.0, lam, degenerate)


def kkt_residual(model: LinearModel, plan: AttackPlan) -> tuple[float, float]:
    """(||P q + lam Q q||, ||P||) for the plan's direction in the feasible basis."""
    B = feasible_basis(model, plan.s_adversary, plan.s_framed)
    M = framing_objective_matrix(model, plan.s_framed) @ B
    P = -(M.T @ M)
    Q = B.T @ B
    q = np.linalg.lstsq(B, plan.direction, rcond=None)[0]
    q = q / np.sqrt(q @ Q @ q)
    lam = -(q @ P @ q)
    return float(np.linalg.norm(P @ q + lam * (Q @ q))), float(np.linalg.norm(P, 2))


def scale_attack(plan: AttackPlan, *, eta: float | None = None, pct: float | None = None,
                 nominal_z: np.ndarray | None = None) -> np.ndarray:
    """a = eta * a*; with ``pct`` the l1 norm of a is pct% of ||nominal_z||_1."""
    if not np.any(plan.direction):
        raise AttackError("attack direction is zero")
    if (eta is None) == (pct is None):
        raise ValueError("give exactly one of eta or pct")
    if pct is not None:
        if nominal_z is None:
            raise ValueError("pct scaling needs the nominal measurement vector")
        eta = np.sign(plan.eta or 1.0) * (pct / 100.0) * np.abs(nominal_z).sum() \
            / np.abs(plan.direction).sum()
    plan.eta = float(eta)
    return plan.eta * plan.direction


def covert_attack(model: LinearModel, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, float)
    if not np.any(y):
        raise AttackError("covert attack needs a nonzero state shift")
    return model.H @ y


@dataclass
class ConservativeAttack:
    vector: np.ndarray
    covert_capable: bool
    budget: float          # (Wa)' S^-1 (Wa) at the returned vector
    gain: float            # squared state shift per unit budget
    details: dict = field(default_factory=dict)


def residual_budget(dof: int, alpha: float, max_detection: float = 0.05) -> float:
    """Largest noncentrality keeping the J-test alarm probability at ``max_detection``.

    Under an additive attack the J statistic is noncentral chi-square with
    noncentrality (Wa)'S^-1(Wa); the budget is the value at which its
    exceedance probability over the threshold reaches ``max_detection``.
    """
    tau = chi2_threshold(alpha, dof)
    if max_detection <= alpha:
        return 0.0
    lo, hi = 0.0, 1.0
    while ncx2.sf(tau, dof, hi) < max_detection:
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if ncx2.sf(tau, dof, mid) < max_detection:
            lo = mid
        else:
            hi = mid
    return lo


def conservative_attack(model: LinearModel, s_adversary, alpha: float = 0.04, *,
                        beta: float | None = None, max_detection: float = 0.05) -> ConservativeAttack:
    """Largest state shift on S_A whose residual stays inside a detector budget.

    Maximizes ||(H'S^-1H)^-1 H'S^-1 a||^2 over a in A subject to
    (Wa)'S^-1(Wa) <= budget. The budget is ``beta * tau`` when ``beta`` is
    given, otherwise :func:`residual_budget` (alarm probability
    ``max_detection``).
    """
    A = list(dict.fromkeys(s_adversary))
    if not A:
        raise AttackError("adversary set is empty")
    ra = model.rows(A)
    sigma = model.sigma
    ops = residual_ops(model.H, sigma, alpha)
    dof = ops.dof
    budget = beta * ops.tau if beta is not None else residual_budget(dof, alpha, max_detection)
    Hw = model.H / sigma[:, None]
    G = np.linalg.solve(model.H.T @ Hw, Hw.T)      # state shift per unit attack
    Gs = G[:, ra]
    WA = ops.W[:, ra]
    K = WA.T @ (WA / sigma[:, None])
    Obj = Gs.T @ Gs
    kmax = np.abs(K).max()
    evals_k = np.linalg.eigvalsh(K)
    if evals_k[0] <= 1e-10 * max(kmax, 1e-300):
        v = np.linalg.eigh(K)[1][:, 0]
        a = np.zeros(model.m)
        a[ra] = canonical_sign(v)
        return ConservativeAttack(a, True, 0.0, np.inf)
    mu, V = sla.eigh(Obj, K)
    u = canonical_sign(V[:, -1])
    u = u * np.sqrt(budget / (u @ K @ u))
    a = np.zeros(model.m)
    a[ra] = u
    return ConservativeAttack(a, False, float(budget), float(mu[-1]),
                              {"tau": ops.tau, "dof": dof})
