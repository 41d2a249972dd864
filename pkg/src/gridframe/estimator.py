"""WLS state estimation with J(x)-test detection and largest-normalized-residual removal.

The loop estimates, tests the weighted residual sum against a chi-square
threshold, and, while the test fails, removes the meter with the largest
absolute normalized residual. DC models use the closed-form linear WLS; AC
models re-run Gauss-Newton and re-linearize at each estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import chi2

from .acmodel import AcModel, ConvergenceError, gauss_newton_wls
from .dcmodel import LinearModel, UnobservableError, rank_tol
from .netmodel import MeterId

CRITICAL_TOL = 1e-10
TIE_RTOL = 1e-9


class EstimationError(RuntimeError):
    """Base for aborted iterative estimation; ``trace`` holds the partial run."""

    def __init__(self, message: str, trace: "EstimationTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class EstimationInfeasible(EstimationError):
    pass


class UnidentifiableBadData(EstimationError):
    pass


# ---------------------------------------------------------------------------
# single-shot pieces
# ---------------------------------------------------------------------------

@dataclass
class LinearFit:
    """Weighted QR factorization of one estimation problem."""

    estimate: np.ndarray
    residual: np.ndarray
    leverage: np.ndarray      # diag of the weighted hat matrix
    sigma: np.ndarray

    @property
    def wsigma_diag(self) -> np.ndarray:
        """Diagonal of W @ Sigma, the good-data residual variances."""
        return self.sigma * (1.0 - self.leverage)

    @property
    def critical(self) -> np.ndarray:
        return (1.0 - self.leverage) < CRITICAL_TOL

    def j_statistic(self) -> float:
        return float(np.sum(self.residual ** 2 / self.sigma))


def _qr_checked(A: np.ndarray, n: int, k: int | None = None):
    if A.shape[0] < n:
        raise UnobservableError(f"unobservable at iteration {k}: fewer rows than states")
    Q, R = np.linalg.qr(A)
    s = np.linalg.svd(R, compute_uv=False)
    if np.sum(s > rank_tol(s, n)) < n:
        raise UnobservableError(f"unobservable at iteration {k}: rank deficient")
    return Q, R


def fit_linear(H: np.ndarray, sigma: np.ndarray, z: np.ndarray, k: int | None = None) -> LinearFit:
    w = 1.0 / np.sqrt(sigma)
    Q, R = _qr_checked(H * w[:, None], H.shape[1], k)
    x = solve_triangular(R, Q.T @ (z * w))
    return LinearFit(x, z - H @ x, np.einsum("ij,ij->i", Q, Q), sigma)


def wls_linear(H: np.ndarray, sigma: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x = (H'S^-1 H)^-1 H'S^-1 z and r = z - Hx (= Wz)."""
    fit = fit_linear(np.asarray(H, float), np.asarray(sigma, float), np.asarray(z, float))
    return fit.estimate, fit.residual


def sensitivity_matrix(H: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """W = I - H (H'S^-1 H)^-1 H'S^-1."""
    s = np.sqrt(sigma)
    Q, _ = _qr_checked(H / s[:, None], H.shape[1])
    return np.eye(H.shape[0]) - (s[:, None] * Q) @ (Q.T / s[None, :])


def chi2_threshold(alpha: float, dof: int) -> float:
    if dof <= 0:
        return np.inf
    return float(chi2.ppf(1.0 - alpha, dof))


@dataclass
class ResidualOps:
    W: np.ndarray
    omega: np.ndarray
    tau: float
    dof: int
    critical: np.ndarray


def residual_ops(H: np.ndarray, sigma: np.ndarray, alpha: float) -> ResidualOps:
    W = sensitivity_matrix(H, sigma)
    rel = np.diag(W)
    critical = rel < CRITICAL_TOL
    omega = np.where(critical, 0.0, 1.0 / np.sqrt(np.where(critical, 1.0, rel * sigma)))
    dof = H.shape[0] - H.shape[1]
    return ResidualOps(W, omega, chi2_threshold(alpha, dof), dof, critical)


def jtest(r: np.ndarray, sigma: np.ndarray, alpha: float, n: int) -> str:
    """'bad' iff r'S^-1 r exceeds the chi-square(m - n) quantile at 1 - alpha."""
    J = float(np.sum(np.asarray(r) ** 2 / np.asarray(sigma)))
    return "bad" if J > chi2_threshold(alpha, len(r) - n) else "good"


def normalized_residuals(r: np.ndarray, W: np.ndarray, sigma: np.ndarray,
                         critical_flags: np.ndarray) -> np.ndarray:
    wdiag = np.diag(W) if np.ndim(W) == 2 else np.asarray(W)
    return _normalize(np.asarray(r, float), wdiag, np.asarray(sigma, float),
                      np.asarray(critical_flags, bool))


def _normalize(r, rel, sigma, critical):
    small = rel < CRITICAL_TOL
    if np.any(small & ~critical):
        raise ValueError("residual variance vanishes on a meter not flagged critical")
    out = np.zeros_like(r)
    ok = ~critical
    out[ok] = r[ok] / np.sqrt(rel[ok] * sigma[ok])
    return out


def identify_worst(rn: np.ndarray, rtol: float = TIE_RTOL) -> list[int]:
    """Indices attaining max |rn| within relative ``rtol`` (ascending)."""
    a = np.abs(np.asarray(rn, float))
    top = a.max() if a.size else 0.0
    if top == 0:
        raise UnidentifiableBadData("all normalized residuals are zero")
    return [int(i) for i in np.flatnonzero(a >= top * (1.0 - rtol))]


# ---------------------------------------------------------------------------
# iterative loop
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    estimate: np.ndarray
    residual: np.ndarray
    normalized_residual: np.ndarray
    j_statistic: float
    threshold: float
    rows: np.ndarray
    removed_meter: MeterId | None = None
    removed_row: int | None = None


@dataclass
class EstimationTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    final_estimate: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.iterations)

    @property
    def removal_sequence(self) -> list[MeterId]:
        return [it.removed_meter for it in self.iterations if it.removed_meter is not None]

    @property
    def removed_rows(self) -> list[int]:
        return [it.removed_row for it in self.iterations if it.removed_row is not None]

    @property
    def detected(self) -> bool:
        return self.N > 1

    def to_text(self, label=str) -> str:
        lines = []
        for k, it in enumerate(self.iterations, 1):
            removed = "-" if it.removed_meter is None else label(it.removed_meter)
            lines.append(f"k={k} J={it.j_statistic:.6g} tau={it.threshold:.6g} "
                         f"removed={removed} |x|={np.linalg.norm(it.estimate):.6g}")
        return "\n".join(lines)


def iterative_estimation(model: LinearModel | AcModel, z: np.ndarray, alpha: float = 0.04,
                         *, init=None, keep_arrays: bool = True,
                         ac_removal: str = "group") -> EstimationTrace:
    """Run estimate -> detect -> identify/remove until the J-test passes.

    For AC models ``ac_removal="group"`` drops the flagged meter as a unit,
    its active and reactive rows together; ``"row"`` drops only the flagged
    measurement row.
    """
    if isinstance(model, AcModel):
        if ac_removal not in ("row", "group"):
            raise ValueError("ac_removal must be 'row' or 'group'")
        return _iterative_ac(model, z, alpha, init, keep_arrays, ac_removal == "group")
    return _iterative_dc(model, z, alpha, keep_arrays)


def _iterative_dc(model: LinearModel, z, alpha, keep_arrays) -> EstimationTrace:
    z = np.asarray(z, float)
    H, sigma, n = model.H, model.sigma, model.state_dim
    active = np.arange(model.m)
    trace = EstimationTrace()
    while True:
        k = trace.N + 1
        try:
            fit = fit_linear(H[active], sigma[active], z[active], k)
        except UnobservableError as exc:
            raise EstimationInfeasible(str(exc), trace) from exc
        J = fit.j_statistic()
        tau = chi2_threshold(alpha, active.size - n)
        rel = 1.0 - fit.leverage
        crit = rel < CRITICAL_TOL
        rn = _normalize(fit.residual, rel, sigma[active], crit)
        rec = IterationRecord(fit.estimate, fit.residual if keep_arrays else None,
                              rn if keep_arrays else None, J, tau, active)
        trace.iterations.append(rec)
        if J <= tau:
            break
        try:
            worst = identify_worst(rn)[0]
        except UnidentifiableBadData as exc:
            raise UnidentifiableBadData("unidentifiable bad data: every remaining "
                                        "residual sits on a critical meter", trace) from exc
        row = int(active[worst])
        rec.removed_row = row
        rec.removed_meter = model.layout.meters[row]
        active = np.delete(active, worst)
    trace.final_estimate = trace.iterations[-1].estimate
    return trace


def _iterative_ac(model: AcModel, z, alpha, init, keep_arrays, by_group) -> EstimationTrace:
    z = np.asarray(z, float)
    sigma, n = model.sigma, model.state_dim
    group = model.row_meter
    active = np.arange(model.m_ext)
    x = init
    trace = EstimationTrace()
    while True:
        k = trace.N + 1
        try:
            x, r = gauss_newton_wls(model, z, x, active)
        except ConvergenceError as exc:
            raise EstimationInfeasible(f"iteration {k}: {exc}", trace) from exc
        except np.linalg.LinAlgError as exc:
            raise EstimationInfeasible(f"iteration {k}: {exc}", trace) from exc
        w = 1.0 / np.sqrt(sigma[active])
        try:
            Q, _ = _qr_checked(model.jacobian_vector(x)[active] * w[:, None], n, k)
        except UnobservableError as exc:
            raise EstimationInfeasible(str(exc), trace) from exc
        rel = 1.0 - np.einsum("ij,ij->i", Q, Q)
        crit = rel < CRITICAL_TOL
        rn = _normalize(r, rel, sigma[active], crit)
        J = float(np.sum(r ** 2 / sigma[active]))
        tau = chi2_threshold(alpha, active.size - n)
        rec = IterationRecord(x, r if keep_arrays else None, rn if keep_arrays else None,
                              J, tau, active)
        trace.iterations.append(rec)
        if J <= tau:
            break
        try:
            worst = identify_worst(rn)[0]
        except UnidentifiableBadData as exc:
            raise UnidentifiableBadData("unidentifiable bad data", trace) from exc
        g = group[active[worst]]
        rec.removed_row = int(active[worst])
        rec.removed_meter = model.row_id(int(active[worst]))
        active = active[group[active] != g] if by_group else np.delete(active, worst)
    trace.final_estimate = x
    return trace
