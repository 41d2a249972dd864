"""Monte Carlo experiments: SNR sweeps over attack scenarios, with CSV output.

Every run draws a true state around the case's operating point, generates
noisy measurements (DC or AC), adds the attack on the active rows and runs
the iterative estimator. One random stream per (seed, run index) supplies
the state and a standardized noise vector that is reused across all SNR
and attack settings, so curves are compared on common random numbers and
results do not depend on how runs are split between workers.
"""

from __future__ import annotations

import configparser
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attack as atk
from .acmodel import AcModel, AcState, build_ac_model, operating_state
from .dcmodel import LinearModel, build_model, snr_to_ratio
from .estimator import EstimationError, iterative_estimation
from .netmodel import GridNetwork, load_case

ANGLE_STD_DEG = 1.15
MAGNITUDE_STD = 0.01
ATTACK_KINDS = ("none", "framing", "conservative")
CSV_COLUMNS = ("scenario", "model", "snr_db", "attack", "magnitude_pct", "runs_ok",
               "runs_failed", "mean_err_l2_rad", "std_err", "mean_N", "detection_rate",
               "mean_err_l2_deg")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    case: str
    adversary: list[str]
    framed: list[str]
    snr_list: list[float]
    magnitudes_pct: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    baselines: list[str] = field(default_factory=lambda: ["none", "conservative"])
    runs: int = 1000
    alpha: float = 0.04
    model: str = "ac"
    seed: int = 2024
    name: str = "scenario"
    angle_std_deg: float = ANGLE_STD_DEG
    magnitude_std: float = MAGNITUDE_STD
    ac_removal: str = "group"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.model not in ("dc", "ac"):
            raise ConfigError("model must be 'dc' or 'ac'")
        if self.ac_removal not in ("group", "row"):
            raise ConfigError("ac_removal must be 'group' or 'row'")
        if not self.snr_list:
            raise ConfigError("snr_list is empty")
        bad = [b for b in self.baselines if b not in ("none", "conservative")]
        if bad:
            raise ConfigError(f"unknown baseline(s): {bad}")
        if any(p <= 0 for p in self.magnitudes_pct):
            raise ConfigError("attack magnitudes must be positive percentages")
        if self.magnitudes_pct and not self.adversary:
            raise ConfigError("framing attacks need adversary meters")

    @property
    def grid(self) -> list[tuple[float, str, float]]:
        """(snr_db, attack kind, magnitude pct) for every curve point; baselines first."""
        out = []
        for snr in self.snr_list:
            out += [(snr, b, math.nan) for b in self.baselines]
            out += [(snr, "framing", p) for p in self.magnitudes_pct]
        return out

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
            ex, sc = cp["experiment"], cp["scenario"]
            kw = dict(
                case=ex.get("case", "ieee14"),
                model=ex.get("model", "ac").lower(),
                runs=ex.getint("runs", 1000),
                alpha=ex.getfloat("alpha", 0.04),
                seed=ex.getint("seed", 2024),
                snr_list=_floats(ex.get("snr_db", "26,31,36,41,46")),
                ac_removal=ex.get("ac_removal", "group").lower(),
                name=sc.get("name", "scenario"),
                adversary=_words(sc.get("adversary", "")),
                framed=_words(sc.get("framed", "")),
                magnitudes_pct=_floats(sc.get("magnitude_pct", "1,2,3")),
                baselines=_words(sc.get("baselines", "none,conservative")),
            )
        except (configparser.Error, KeyError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class CurvePoint:
    snr_db: float
    attack: str
    magnitude_pct: float
    runs_ok: int
    runs_failed: int
    mean_err_rad: float
    std_err: float
    mean_N: float
    detection_rate: float
    removal_fraction: dict          # row label -> fraction of successful runs removing it
    mean_perturbation_deg: np.ndarray   # per bus, signed, reference included (zero)

    @property
    def mean_err_deg(self) -> float:
        return math.degrees(self.mean_err_rad)


@dataclass
class ErrorCurve:
    scenario: str
    model: str
    points: list[CurvePoint]

    def select(self, attack: str, magnitude_pct: float | None = None) -> list[CurvePoint]:
        """Points of one curve, ordered by SNR."""
        pts = [p for p in self.points if p.attack == attack and
               (magnitude_pct is None or p.magnitude_pct == magnitude_pct)]
        return sorted(pts, key=lambda p: p.snr_db)

    def point(self, snr_db: float, attack: str, magnitude_pct: float | None = None) -> CurvePoint:
        for p in self.select(attack, magnitude_pct):
            if p.snr_db == snr_db:
                return p
        raise KeyError((snr_db, attack, magnitude_pct))


# ---------------------------------------------------------------------------
# random draws
# ---------------------------------------------------------------------------

def gen_true_state(net: GridNetwork, rng: np.random.Generator, model: str = "ac", *,
                   angle_std_deg: float = ANGLE_STD_DEG,
                   magnitude_std: float = MAGNITUDE_STD):
    """Gaussian state around the operating point; the reference angle stays fixed.

    Returns an :class:`AcState` for ``model="ac"`` and the non-reference angle
    vector (radians, relative to the reference) for ``model="dc"``.
    """
    op = operating_state(net)
    nb = net.n_buses
    dth = rng.standard_normal(nb) * math.radians(angle_std_deg)
    dth[net.reference_bus] = 0.0
    angles = op.angles + dth
    if model == "dc":
        return angles[net.non_reference] - angles[net.reference_bus]
    mags = op.magnitudes + rng.standard_normal(nb) * magnitude_std
    return AcState(mags, angles)


def run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(run)])


# ---------------------------------------------------------------------------
# scenario setup
# ---------------------------------------------------------------------------

@dataclass
class _Setup:
    config: ExperimentConfig
    net: GridNetwork
    dc: LinearModel                  # noise-free shape model used for attack design
    ac: AcModel | None
    nominal: np.ndarray              # nominal measurement over the simulated rows
    nominal_active: np.ndarray       # active (DC) part, for magnitude scaling
    points: list                     # (snr, kind, pct, noisy model, attack on simulated rows)


def _noise_var(setup_nominal: np.ndarray, snr_db: float) -> float:
    amp = float(np.sqrt(np.mean(setup_nominal ** 2)))
    return (snr_to_ratio(snr_db) * amp) ** 2


def prepare(config: ExperimentConfig) -> _Setup:
    """Load the case, design the attacks, and build one noisy model per SNR."""
    net = load_case(config.case)
    dc = build_model(net)
    if config.model == "ac":
        ac = build_ac_model(net)
        nominal = ac.measure_vector(ac.to_vector(operating_state(net)))
        nominal_active = nominal[: ac.m]
    else:
        ac = None
        op = operating_state(net)
        nominal = dc.H @ (op.angles[net.non_reference] - op.angles[net.reference_bus])
        nominal_active = nominal
    adversary = net.meters(config.adversary)
    framed = net.meters(config.framed)

    plan = None
    if config.magnitudes_pct:
        plan = atk.framing_direction(dc, adversary, framed)
        if plan.degenerate:
            raise atk.NoFramingAttack("framing objective is zero for this scenario")

    points = []
    for snr, kind, pct in config.grid:
        var = _noise_var(nominal, snr)
        if ac is not None:
            noisy = ac.with_noise(np.full(ac.m_ext, 1.0 / ac.m_ext), var * ac.m_ext)
        else:
            noisy = dc.with_noise(np.full(dc.m, 1.0 / dc.m), var * dc.m)
        if kind == "none":
            a = np.zeros(dc.m)
        elif kind == "framing":
            a = atk.scale_attack(plan, pct=pct, nominal_z=nominal_active)
        else:
            design = dc.with_noise(np.full(dc.m, 1.0 / dc.m), var * dc.m)
            cons = atk.conservative_attack(design, adversary, config.alpha)
            a = cons.vector
            if cons.covert_capable:
                # unbounded under the detector; use the largest framing magnitude
                scale = max(config.magnitudes_pct or [1.0]) / 100.0
                a = a * scale * np.abs(nominal_active).sum() / np.abs(a).sum()
        if ac is not None:
            a = ac.embed_active(a)
        points.append((snr, kind, pct, noisy, a))
    return _Setup(config, net, dc, ac, nominal, nominal_active, points)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _one_run(setup: _Setup, run: int):
    """Results of one run at every grid point: (err, N, removed groups, perturbation)."""
    cfg, net = setup.config, setup.net
    rng = run_rng(cfg.seed, run)
    x = gen_true_state(net, rng, cfg.model, angle_std_deg=cfg.angle_std_deg,
                       magnitude_std=cfg.magnitude_std)
    if setup.ac is not None:
        xv = setup.ac.to_vector(x)
        clean = setup.ac.measure_vector(xv)
        x_ang = setup.ac.angle_part(xv)
    else:
        clean = setup.dc.H @ x
        x_ang = x
    e = rng.standard_normal(clean.size)
    out = []
    for _, _, _, model, a in setup.points:
        z = clean + e * np.sqrt(model.sigma) + a
        try:
            tr = iterative_estimation(model, z, cfg.alpha, keep_arrays=False,
                                      ac_removal=cfg.ac_removal)
        except EstimationError:
            out.append(None)
            continue
        est = tr.final_estimate
        est_ang = setup.ac.angle_part(est) if setup.ac is not None else est
        d = est_ang - x_ang
        out.append((float(np.linalg.norm(d)), tr.N, tr.removed_rows, d))
    return out


def _run_block(args):
    config, runs = args
    setup = prepare(config)
    return [_one_run(setup, r) for r in runs]


def _aggregate(setup: _Setup, results: list) -> ErrorCurve:
    net, dc = setup.net, setup.dc
    if setup.ac is not None:
        labels = [setup.ac.row_label(r) for r in range(setup.ac.m_ext)]
    else:
        labels = [net.label(mt) for mt in dc.layout.meters]
    pts = []
    for g, (snr, kind, pct, _, _) in enumerate(setup.points):
        rs = [res[g] for res in results if res[g] is not None]
        failed = len(results) - len(rs)
        ok = len(rs)
        if ok:
            err = np.array([r[0] for r in rs])
            Ns = np.array([r[1] for r in rs], float)
            mean_err = float(err.mean())
            std_err = float(err.std(ddof=1) / np.sqrt(ok)) if ok > 1 else math.nan
            counts: dict[str, int] = {}
            for r in rs:
                for row in set(r[2]):
                    counts[labels[row]] = counts.get(labels[row], 0) + 1
            frac = {k: counts[k] / ok for k in sorted(counts, key=lambda k: -counts[k])}
            pert = np.degrees(dc.full_state(np.mean([r[3] for r in rs], axis=0)))
            pts.append(CurvePoint(snr, kind, pct, ok, failed, mean_err, std_err,
                                  float(Ns.mean()), float(np.mean(Ns > 1)), frac, pert))
        else:
            pts.append(CurvePoint(snr, kind, pct, 0, failed, math.nan, math.nan, math.nan,
                                  math.nan, {}, np.full(net.n_buses, math.nan)))
    return ErrorCurve(setup.config.name, setup.config.model, pts)


def run_scenario(config: ExperimentConfig, *, workers: int = 1) -> ErrorCurve:
    """Monte Carlo over ``config.runs`` runs at every (SNR, attack) grid point.

    Failed runs (estimation infeasible or unidentifiable) are counted per point
    and excluded from the means. Output is identical for any ``workers``.
    """
    setup = prepare(config)
    runs = list(range(config.runs))
    if workers <= 1:
        results = [_one_run(setup, r) for r in runs]
    else:
        blocks = [runs[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_block, [(config, b) for b in blocks]))
        by_run = {}
        for b, part in zip(blocks, parts):
            by_run.update(zip(b, part))
        results = [by_run[r] for r in runs]
    return _aggregate(setup, results)


def run_sweep(configs: list[ExperimentConfig], *, workers: int = 1) -> list[ErrorCurve]:
    return [run_scenario(c, workers=workers) for c in configs]


def perturbation_profile(config: ExperimentConfig, *, snr_db: float | None = None,
                         magnitude_pct: float | None = None, workers: int = 1,
                         curve: ErrorCurve | None = None) -> list[tuple[int, float]]:
    """Signed mean angle perturbation per bus (degrees), largest |mean| first.

    Uses the framing curve at ``magnitude_pct`` (default: the largest) and
    ``snr_db`` (default: the highest). Buses are reported by case number.
    """
    snr = max(config.snr_list) if snr_db is None else snr_db
    pct = max(config.magnitudes_pct) if magnitude_pct is None else magnitude_pct
    if curve is None:
        sub = ExperimentConfig(**{**config.__dict__, "snr_list": [snr],
                                  "magnitudes_pct": [pct], "baselines": []})
        curve = run_scenario(sub, workers=workers)
    p = curve.point(snr, "framing", pct)
    net = load_case(config.case)
    order = np.argsort(-np.abs(p.mean_perturbation_deg), kind="stable")
    return [(net.buses[k].name, float(p.mean_perturbation_deg[k])) for k in order]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def export_csv(curves: list[ErrorCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in curves:
            for p in c.points:
                w.writerow([c.scenario, c.model, repr(p.snr_db), p.attack, repr(p.magnitude_pct),
                            p.runs_ok, p.runs_failed, repr(p.mean_err_rad), repr(p.std_err),
                            repr(p.mean_N), repr(p.detection_rate), repr(p.mean_err_deg)])


def read_csv(path) -> list[dict]:
    """Rows of an exported CSV with numeric columns converted."""
    ints = {"runs_ok", "runs_failed"}
    text = {"scenario", "model", "attack"}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: (v if k in text else int(v) if k in ints else float(v))
                         for k, v in rec.items()})
    return rows
