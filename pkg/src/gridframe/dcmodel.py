"""DC measurement model z = Hx + e with diagonal noise covariance sigma2 * sigma_bar."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .netmodel import GridNetwork, Injection, LineFlow, MeterLayout, full_meter_layout


class UnobservableError(ValueError):
    pass


def rank_tol(s: np.ndarray, n: int) -> float:
    """Singular-value cutoff used for every rank decision in the package."""
    return n * (s[0] if s.size else 0.0) * 1e-12


def numerical_rank(H: np.ndarray) -> int:
    if H.size == 0:
        return 0
    s = np.linalg.svd(H, compute_uv=False)
    return int(np.sum(s > rank_tol(s, H.shape[1])))


SUSCEPTANCE_MODES = ("linearized", "reactance")


def directed_flow_matrix(net: GridNetwork, susceptance: str = "linearized") -> np.ndarray:
    """Rows B_ij (e_i - e_j) over all buses, for flows i->j then j->i per line.

    ``susceptance="linearized"`` uses x/(r^2+x^2), the angle derivative of the
    AC active flow at the flat state; ``"reactance"`` uses 1/x.
    """
    if susceptance not in SUSCEPTANCE_MODES:
        raise ValueError(f"susceptance must be one of {SUSCEPTANCE_MODES}")
    D = np.zeros((2 * net.n_lines, net.n_buses))
    for k, ln in enumerate(net.lines):
        b = ln.susceptance if susceptance == "linearized" else ln.reactance_susceptance
        D[2 * k, ln.from_bus] = b
        D[2 * k, ln.to_bus] = -b
        D[2 * k + 1] = -D[2 * k]
    return D


def meter_selector(net: GridNetwork, layout: MeterLayout) -> np.ndarray:
    """Matrix mapping the 2L directed flows onto the layout's meters.

    A flow meter picks its directed flow; an injection meter sums the flows
    leaving its bus.
    """
    S = np.zeros((layout.m, 2 * net.n_lines))
    for row, meter in enumerate(layout.meters):
        if isinstance(meter, LineFlow):
            k = net.line_index[frozenset((meter.i, meter.j))]
            S[row, 2 * k + (0 if net.lines[k].from_bus == meter.i else 1)] = 1.0
        else:
            for k, ln in enumerate(net.lines):
                if ln.from_bus == meter.i:
                    S[row, 2 * k] = 1.0
                elif ln.to_bus == meter.i:
                    S[row, 2 * k + 1] = 1.0
    return S


@dataclass(frozen=True)
class LinearModel:
    net: GridNetwork
    layout: MeterLayout
    H: np.ndarray
    sigma_bar: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        m, n = self.H.shape
        if m != self.layout.m or n != self.net.state_dim:
            raise ValueError("H shape does not match layout and network")
        if self.sigma_bar.shape != (m,) or np.any(self.sigma_bar <= 0):
            raise ValueError("sigma_bar must be a positive length-m vector")
        if abs(self.sigma_bar.sum() - 1.0) > 1e-12:
            raise ValueError("sigma_bar must sum to one")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        """Diagonal of the full covariance sigma2 * sigma_bar."""
        return self.sigma2 * self.sigma_bar

    def with_noise(self, sigma_bar: np.ndarray, sigma2: float) -> "LinearModel":
        return replace(self, sigma_bar=np.asarray(sigma_bar, float), sigma2=float(sigma2))

    def rows(self, meters) -> np.ndarray:
        return self.layout.rows(meters)

    def full_state(self, x: np.ndarray) -> np.ndarray:
        """Insert the reference angle (zero) into a reduced state vector."""
        full = np.zeros(self.net.n_buses)
        full[self.net.non_reference] = x
        return full


def build_H(net: GridNetwork, layout: MeterLayout | None = None, *, check: bool = True,
            susceptance: str = "linearized") -> np.ndarray:
    layout = layout or full_meter_layout(net)
    H = meter_selector(net, layout) @ directed_flow_matrix(net, susceptance)
    H = H[:, net.non_reference]
    if check and numerical_rank(H) < H.shape[1]:
        raise UnobservableError("unobservable network: H is rank deficient")
    return H


def build_model(net: GridNetwork, layout: MeterLayout | None = None,
                sigma_bar: np.ndarray | None = None, sigma2: float = 1.0,
                susceptance: str = "linearized") -> LinearModel:
    layout = layout or full_meter_layout(net)
    H = build_H(net, layout, susceptance=susceptance)
    if sigma_bar is None:
        sigma_bar = np.full(layout.m, 1.0 / layout.m)
    return LinearModel(net, layout, H, np.asarray(sigma_bar, float), float(sigma2))


def snr_to_ratio(snr_db: float) -> float:
    """Noise-to-signal amplitude ratio for a meter SNR in dB."""
    return 10.0 ** (-snr_db / 20.0)


def noise_model(m: int, snr_db: float, nominal_z: np.ndarray,
                weights: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Return (sigma_bar, sigma2) for a meter SNR.

    Each meter's noise std is ratio * RMS(nominal_z), optionally reshaped by
    per-meter variance ``weights`` (normalized to mean one, so the average
    variance is unchanged).
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    nominal_z = np.asarray(nominal_z, float)
    amp = np.sqrt(np.mean(nominal_z ** 2))
    if amp == 0:
        raise ValueError("nominal measurement vector is zero; SNR undefined")
    var = (snr_to_ratio(snr_db) * amp) ** 2 * np.ones(m)
    if weights is not None:
        w = np.asarray(weights, float)
        if w.shape != (m,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per meter")
        var = var * w / w.mean()
    total = var.sum()
    return var / total, float(total)


def simulate_dc(model: LinearModel, x: np.ndarray, a: np.ndarray | None = None,
                rng_seed=None) -> np.ndarray:
    """Draw Hx + e + a with e ~ N(0, sigma2 * sigma_bar)."""
    rng = np.random.default_rng(rng_seed)
    e = rng.standard_normal(model.m) * np.sqrt(model.sigma)
    z = model.H @ np.asarray(x, float) + e
    if a is not None:
        z = z + a
    return z
