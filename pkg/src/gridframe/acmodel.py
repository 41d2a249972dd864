"""AC measurement function, its Jacobian, and Gauss-Newton WLS.

Row layout of the extended measurement vector for a DC layout with m meters:

    rows 0..m-1     active part of each meter (same order as the DC layout)
    rows m..2m-1    reactive companion of each meter
    row 2m          voltage magnitude at the reference bus

Attack vectors designed on the DC model therefore embed into rows 0..m-1.
The state vector is [angles at non-reference buses, magnitudes at all buses].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .dcmodel import meter_selector
from .netmodel import GridNetwork, MeterId, MeterLayout, full_meter_layout


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Reactive:
    """Reactive companion row of a meter in the extended AC layout."""
    meter: MeterId


@dataclass(frozen=True)
class RefMagnitude:
    """Voltage-magnitude measurement at the reference bus."""


@dataclass(frozen=True)
class AcState:
    magnitudes: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.magnitudes) <= 0):
            raise ValueError("voltage magnitudes must be positive")


def operating_state(net: GridNetwork) -> AcState:
    return AcState(np.array([b.operating_magnitude for b in net.buses]),
                   np.array([b.operating_angle for b in net.buses]))


def flat_state(net: GridNetwork) -> AcState:
    return AcState(np.ones(net.n_buses), np.zeros(net.n_buses))


@dataclass(frozen=True, eq=False)
class AcModel:
    net: GridNetwork
    layout: MeterLayout
    sigma_bar: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        m2 = self.m_ext
        sb = np.asarray(self.sigma_bar, float)
        if sb.shape != (m2,) or np.any(sb <= 0):
            raise ValueError("sigma_bar must be positive over the extended rows")
        if abs(sb.sum() - 1.0) > 1e-12:
            raise ValueError("sigma_bar must sum to one")
        net = self.net
        L = net.n_lines
        fi = np.empty(2 * L, int)
        ti = np.empty(2 * L, int)
        for k, ln in enumerate(net.lines):
            fi[2 * k], ti[2 * k] = ln.from_bus, ln.to_bus
            fi[2 * k + 1], ti[2 * k + 1] = ln.to_bus, ln.from_bus
        y = np.array([ln.series_admittance for ln in net.lines])
        bsh = np.array([ln.shunt_charging for ln in net.lines])
        object.__setattr__(self, "_fi", fi)
        object.__setattr__(self, "_ti", ti)
        object.__setattr__(self, "_g", np.repeat(y.real, 2))
        object.__setattr__(self, "_b", np.repeat(y.imag, 2))
        object.__setattr__(self, "_bs", np.repeat(bsh / 2.0, 2))
        object.__setattr__(self, "_S", sp.csr_matrix(meter_selector(net, self.layout)))
        object.__setattr__(self, "_cols", np.concatenate([net.non_reference,
                                                          net.n_buses + np.arange(net.n_buses)]))

    @property
    def m(self) -> int:
        """Number of meters (active rows)."""
        return self.layout.m

    @property
    def m_ext(self) -> int:
        return 2 * self.layout.m + 1

    @property
    def state_dim(self) -> int:
        return self.net.state_dim + self.net.n_buses

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma2 * np.asarray(self.sigma_bar, float)

    def row_id(self, row: int):
        """Meter identity of an extended row: MeterId, Reactive(MeterId) or RefMagnitude()."""
        if row < self.m:
            return self.layout.meters[row]
        if row < 2 * self.m:
            return Reactive(self.layout.meters[row - self.m])
        if row == 2 * self.m:
            return RefMagnitude()
        raise IndexError(row)

    def row_label(self, row: int) -> str:
        rid = self.row_id(row)
        if isinstance(rid, Reactive):
            return "Q:" + self.net.label(rid.meter)
        if isinstance(rid, RefMagnitude):
            return "Vref"
        return self.net.label(rid)

    @property
    def row_meter(self) -> np.ndarray:
        """Meter group of each extended row; the V_ref row is group m."""
        m = self.m
        return np.concatenate([np.arange(m), np.arange(m), [m]])

    def with_noise(self, sigma_bar, sigma2) -> "AcModel":
        return replace(self, sigma_bar=np.asarray(sigma_bar, float), sigma2=float(sigma2))

    def embed_active(self, a: np.ndarray) -> np.ndarray:
        """Place a DC-row vector on the active rows, zeros elsewhere."""
        out = np.zeros(self.m_ext)
        out[: self.m] = a
        return out

    # -- state vector packing --------------------------------------------
    def to_vector(self, s: AcState) -> np.ndarray:
        ang = np.asarray(s.angles, float)
        return np.concatenate([ang[self.net.non_reference] - ang[self.net.reference_bus],
                               np.asarray(s.magnitudes, float)])

    def from_vector(self, v: np.ndarray) -> AcState:
        n = self.net.state_dim
        ang = np.zeros(self.net.n_buses)
        ang[self.net.non_reference] = v[:n]
        return AcState(np.array(v[n:], float), ang)

    def angle_part(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[: self.net.state_dim]

    # -- measurement function ---------------------------------------------
    def _split(self, v):
        n = self.net.state_dim
        th = np.zeros(self.net.n_buses)
        th[self.net.non_reference] = v[:n]
        return th, v[n:]

    def _directed(self, v):
        th, vm = self._split(v)
        fi, ti, g, b = self._fi, self._ti, self._g, self._b
        d = th[fi] - th[ti]
        c, s = np.cos(d), np.sin(d)
        vi, vj = vm[fi], vm[ti]
        gcbs = g * c + b * s
        gsbc = g * s - b * c
        P = vi * vi * g - vi * vj * gcbs
        Q = -vi * vi * (b + self._bs) - vi * vj * gsbc
        return P, Q, (vi, vj, gcbs, gsbc)

    def measure_vector(self, v: np.ndarray) -> np.ndarray:
        P, Q, _ = self._directed(v)
        _, vm = self._split(v)
        return np.concatenate([self._S @ P, self._S @ Q, [vm[self.net.reference_bus]]])

    def jacobian_vector(self, v: np.ndarray) -> np.ndarray:
        _, _, (vi, vj, gcbs, gsbc) = self._directed(v)
        fi, ti, g, b = self._fi, self._ti, self._g, self._b
        nb = self.net.n_buses
        r = np.arange(fi.size)
        # derivatives of each directed flow w.r.t. (theta_all, V_all)
        dP = np.zeros((fi.size, 2 * nb))
        dQ = np.zeros((fi.size, 2 * nb))
        dPdth = vi * vj * gsbc
        dQdth = -vi * vj * gcbs
        dP[r, fi] += dPdth
        dP[r, ti] -= dPdth
        dQ[r, fi] += dQdth
        dQ[r, ti] -= dQdth
        dP[r, nb + fi] += 2 * vi * g - vj * gcbs
        dP[r, nb + ti] += -vi * gcbs
        dQ[r, nb + fi] += -2 * vi * (b + self._bs) - vj * gsbc
        dQ[r, nb + ti] += -vi * gsbc
        J = np.empty((self.m_ext, 2 * nb))
        J[: self.m] = self._S @ dP
        J[self.m: 2 * self.m] = self._S @ dQ
        J[-1] = 0.0
        J[-1, nb + self.net.reference_bus] = 1.0
        return J[:, self._cols]


def build_ac_model(net: GridNetwork, layout: MeterLayout | None = None,
                   sigma_bar: np.ndarray | None = None, sigma2: float = 1.0) -> AcModel:
    layout = layout or full_meter_layout(net)
    m2 = 2 * layout.m + 1
    if sigma_bar is None:
        sigma_bar = np.full(m2, 1.0 / m2)
    return AcModel(net, layout, np.asarray(sigma_bar, float), float(sigma2))


def ac_measure(model: AcModel, s: AcState) -> np.ndarray:
    return model.measure_vector(model.to_vector(s))


def ac_jacobian(model: AcModel, s: AcState) -> np.ndarray:
    """Derivatives w.r.t. non-reference angles then all magnitudes."""
    return model.jacobian_vector(model.to_vector(s))


def gauss_newton_wls(model: AcModel, z: np.ndarray, init: AcState | np.ndarray | None = None,
                     rows: np.ndarray | None = None, *, tol: float = 1e-8,
                     max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Weighted nonlinear least squares by Gauss-Newton.

    Steps solve the normal equations (J'S^-1 J) dx = J'S^-1 r by Cholesky.

    Returns the state vector (see :meth:`AcModel.to_vector`) and the residual
    z - h(x) on ``rows``. Raises :class:`ConvergenceError` if the step norm
    grows for five consecutive iterations or ``max_iter`` is exhausted.
    """
    if rows is None:
        rows = np.arange(model.m_ext)
    if init is None:
        x = model.to_vector(flat_state(model.net))
    elif isinstance(init, AcState):
        x = model.to_vector(init)
    else:
        x = np.array(init, float)
    z = np.asarray(z, float)
    zr = z[rows] if z.shape[0] == model.m_ext else z
    w = 1.0 / np.sqrt(model.sigma[rows])
    prev = np.inf
    growing = 0
    for _ in range(max_iter):
        res = zr - model.measure_vector(x)[rows]
        A = model.jacobian_vector(x)[rows] * w[:, None]
        try:
            dx = cho_solve(cho_factor(A.T @ A), A.T @ (res * w))
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular gain matrix: {exc}") from None
        x = x + dx
        step = np.linalg.norm(dx)
        if not np.isfinite(step):
            raise ConvergenceError("Gauss-Newton produced a non-finite step")
        if step < tol:
            break
        growing = growing + 1 if step > prev else 0
        if growing >= 5:
            raise ConvergenceError("Gauss-Newton diverging: step norm grew 5 times in a row")
        prev = step
    else:
        raise ConvergenceError(f"Gauss-Newton did not converge in {max_iter} iterations")
    return x, zr - model.measure_vector(x)[rows]
