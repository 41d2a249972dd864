"""Grid topology, IEEE Common Data Format I/O and meter placement.

Buses are renumbered to dense 0-based indices on load; the original CDF
bus numbers are kept on each :class:`Bus` for display and for the meter
syntax used on the command line (``"2-3"`` is the flow meter on line
{2, 3} near bus 2, ``"3"`` the injection meter at bus 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np


class CaseParseError(ValueError):
    """Raised for malformed case files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    name: int
    base_voltage: float = 0.0
    operating_angle: float = 0.0
    operating_magnitude: float = 1.0
    bus_type: int = 0
    label: str = ""

    def __post_init__(self):
        if not self.operating_magnitude > 0:
            raise NetworkError(f"bus {self.name}: voltage magnitude must be positive")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    series_resistance: float
    series_reactance: float
    shunt_charging: float = 0.0
    tap_ratio: float = 0.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError("line endpoints must differ")
        if self.series_reactance == 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} has zero reactance")

    @property
    def susceptance(self) -> float:
        """DC line susceptance: x / (r^2 + x^2), the flat-start slope dP_ij/dtheta_ij."""
        return -self.series_admittance.imag

    @property
    def reactance_susceptance(self) -> float:
        """Resistance-free approximation 1/x."""
        return 1.0 / self.series_reactance

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.series_resistance, self.series_reactance)


@dataclass(frozen=True, order=True)
class LineFlow:
    """Active power flow from bus ``i`` to bus ``j`` (dense indices)."""

    i: int
    j: int


@dataclass(frozen=True, order=True)
class Injection:
    """Active power injection at bus ``i`` (dense index)."""

    i: int


MeterId = Union[LineFlow, Injection]


@dataclass(frozen=True)
class GridNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    reference_bus: int
    base_mva: float = 100.0
    title: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if ids != list(range(len(ids))):
            raise NetworkError("bus ids must be dense 0..n-1 in order")
        if not 0 <= self.reference_bus < len(self.buses):
            raise NetworkError("reference bus out of range")
        seen = set()
        for line in self.lines:
            for b in (line.from_bus, line.to_bus):
                if not 0 <= b < len(self.buses):
                    raise NetworkError(f"line references unknown bus index {b}")
            key = frozenset((line.from_bus, line.to_bus))
            if key in seen:
                raise NetworkError("duplicate line; merge parallel branches first")
            seen.add(key)
        if not self.subnetwork_connected(range(len(self.buses))):
            raise NetworkError("network graph is not connected")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def state_dim(self) -> int:
        return len(self.buses) - 1

    @cached_property
    def line_index(self) -> dict[frozenset, int]:
        return {frozenset((ln.from_bus, ln.to_bus)): k for k, ln in enumerate(self.lines)}

    @cached_property
    def bus_by_name(self) -> dict[int, int]:
        return {b.name: b.id for b in self.buses}

    @cached_property
    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.buses]
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        return adj

    @property
    def non_reference(self) -> np.ndarray:
        """Bus indices that carry a state variable, in column order."""
        return np.array([b for b in range(self.n_buses) if b != self.reference_bus])

    def has_line(self, i: int, j: int) -> bool:
        return frozenset((i, j)) in self.line_index

    def subnetwork_connected(self, vertex_subset: Iterable[int]) -> bool:
        subset = set(vertex_subset)
        if not subset:
            raise ValueError("vertex subset must be nonempty")
        start = next(iter(subset))
        seen = {start}
        stack = [start]
        adj = self.adjacency
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in subset and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen == subset

    # -- meter naming --------------------------------------------------
    def meter(self, text: str) -> MeterId:
        """Parse ``"i-j"`` (flow i to j) or ``"i"`` (injection) in CDF bus numbers."""
        text = text.strip().strip("()")
        try:
            if "-" in text or "," in text:
                a, b = (int(t) for t in text.replace(",", "-").split("-"))
                m: MeterId = LineFlow(self.bus_by_name[a], self.bus_by_name[b])
            else:
                m = Injection(self.bus_by_name[int(text)])
        except (KeyError, ValueError) as exc:
            raise NetworkError(f"bad meter {text!r}") from exc
        check_meter(self, m)
        return m

    def meters(self, text: str | Sequence[str]) -> list[MeterId]:
        parts = text.split(",") if isinstance(text, str) else list(text)
        out = []
        for p in parts:
            p = p.strip()
            if p:
                out.append(self.meter(p))
        return out

    def label(self, meter: MeterId) -> str:
        if isinstance(meter, LineFlow):
            return f"{self.buses[meter.i].name}-{self.buses[meter.j].name}"
        return f"{self.buses[meter.i].name}"


def check_meter(net: GridNetwork, meter: MeterId) -> None:
    if isinstance(meter, LineFlow):
        if not net.has_line(meter.i, meter.j):
            raise NetworkError(f"no line between bus indices {meter.i} and {meter.j}")
    elif isinstance(meter, Injection):
        if not 0 <= meter.i < net.n_buses:
            raise NetworkError(f"no bus with index {meter.i}")
    else:
        raise TypeError(f"not a meter: {meter!r}")


@dataclass(frozen=True)
class MeterLayout:
    """Ordered meter list; position in ``meters`` is the row index in z."""

    meters: tuple[MeterId, ...]
    _rows: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = {m: k for k, m in enumerate(self.meters)}
        if len(rows) != len(self.meters):
            raise NetworkError("duplicate meter in layout")
        object.__setattr__(self, "_rows", rows)

    @property
    def m(self) -> int:
        return len(self.meters)

    def __len__(self) -> int:
        return len(self.meters)

    def __iter__(self):
        return iter(self.meters)

    def __contains__(self, meter) -> bool:
        return meter in self._rows

    def row(self, meter: MeterId) -> int:
        try:
            return self._rows[meter]
        except KeyError:
            raise NetworkError(f"meter {meter!r} not in layout") from None

    def rows(self, meters: Iterable[MeterId]) -> np.ndarray:
        return np.array(sorted(self.row(m) for m in meters), dtype=int)


def full_meter_layout(net: GridNetwork) -> MeterLayout:
    """Injection at every bus, then both flow directions on every line."""
    meters: list[MeterId] = [Injection(b.id) for b in net.buses]
    for ln in net.lines:
        meters.append(LineFlow(ln.from_bus, ln.to_bus))
        meters.append(LineFlow(ln.to_bus, ln.from_bus))
    return MeterLayout(tuple(meters))


def make_layout(net: GridNetwork, meters: Iterable[MeterId]) -> MeterLayout:
    meters = tuple(meters)
    for m in meters:
        check_meter(net, m)
    return MeterLayout(meters)


# ---------------------------------------------------------------------------
# IEEE Common Data Format
# ---------------------------------------------------------------------------

# 0-based half-open column slices of the fixed-width cards.
_BUS_COLS = {
    "number": (0, 4), "name": (5, 17), "area": (18, 20), "zone": (20, 23),
    "type": (24, 26), "vm": (27, 33), "va": (33, 40), "pd": (40, 49),
    "qd": (49, 58), "pg": (58, 67), "qg": (67, 75), "base_kv": (76, 83),
    "vset": (84, 90), "qmax": (90, 98), "qmin": (98, 106), "gs": (106, 114),
    "bs": (114, 122), "remote": (123, 127),
}
_BRANCH_COLS = {
    "from": (0, 4), "to": (5, 9), "area": (10, 12), "zone": (12, 14),
    "circuit": (16, 17), "type": (18, 19), "r": (19, 29), "x": (29, 40),
    "b": (40, 50), "rate1": (50, 55), "rate2": (56, 61), "rate3": (62, 67),
    "ctrl": (68, 72), "side": (73, 74), "ratio": (76, 82), "angle": (83, 90),
}


def _field(line: str, cols: tuple[int, int], lineno: int, kind, what: str):
    raw = line[cols[0]:cols[1]].strip()
    if kind is str:
        return raw
    if not raw:
        return kind(0)
    try:
        return kind(float(raw)) if kind is int else kind(raw)
    except ValueError:
        raise CaseParseError(f"bad {what} field {raw!r}", lineno) from None


def _section(lines: list[str], header: str) -> tuple[int, list[tuple[int, str]]]:
    for k, line in enumerate(lines):
        if line.upper().startswith(header):
            start = k
            break
    else:
        raise CaseParseError(f"missing section header {header!r}")
    tail = lines[start][len(header):].split()
    declared = -1
    if tail and tail[0].isdigit():
        declared = int(tail[0])
    body = []
    for k in range(start + 1, len(lines)):
        if lines[k].strip().startswith("-999"):
            if declared >= 0 and declared != len(body):
                raise CaseParseError(
                    f"{header} declares {declared} items but has {len(body)}", start + 1)
            return start + 1, body
        if lines[k].strip():
            body.append((k + 1, lines[k]))
    raise CaseParseError(f"section {header!r} not terminated by -999", start + 1)


def parse_ieee_cdf(text: str) -> GridNetwork:
    """Parse an IEEE Common Data Format case.

    Parallel branches are merged into one equivalent line (admittances and
    charging summed). Angles are converted to radians and made relative to
    the swing bus.
    """
    lines = text.splitlines()
    if not lines:
        raise CaseParseError("empty case file", 1)
    title = lines[0].rstrip()
    try:
        base_mva = float(lines[0][31:37])
    except ValueError:
        base_mva = 100.0

    bus_line, bus_cards = _section(lines, "BUS DATA FOLLOWS")
    branch_line, branch_cards = _section(lines, "BRANCH DATA FOLLOWS")
    if not bus_cards:
        raise CaseParseError("no buses in BUS DATA section", bus_line)

    raw_buses = []
    index: dict[int, int] = {}
    for lineno, card in bus_cards:
        number = _field(card, _BUS_COLS["number"], lineno, int, "bus number")
        if number in index:
            raise CaseParseError(f"duplicate bus number {number}", lineno)
        index[number] = len(raw_buses)
        raw_buses.append(dict(
            number=number,
            label=_field(card, _BUS_COLS["name"], lineno, str, "name"),
            type=_field(card, _BUS_COLS["type"], lineno, int, "bus type"),
            vm=_field(card, _BUS_COLS["vm"], lineno, float, "voltage"),
            va=_field(card, _BUS_COLS["va"], lineno, float, "angle"),
            kv=_field(card, _BUS_COLS["base_kv"], lineno, float, "base kV"),
            lineno=lineno,
        ))
    swing = [b for b in raw_buses if b["type"] == 3]
    if not swing:
        raise CaseParseError("no swing bus (type 3) in BUS DATA section", bus_line)
    ref = index[swing[0]["number"]]
    ref_angle = swing[0]["va"]

    buses = []
    for k, b in enumerate(raw_buses):
        if not b["vm"] > 0:
            raise CaseParseError(f"bus {b['number']}: nonpositive voltage", b["lineno"])
        buses.append(Bus(
            id=k, name=b["number"], base_voltage=b["kv"],
            operating_angle=math.radians(b["va"] - ref_angle),
            operating_magnitude=b["vm"], bus_type=b["type"], label=b["label"],
        ))

    merged: dict[frozenset, list] = {}
    order: list[frozenset] = []
    for lineno, card in branch_cards:
        f = _field(card, _BRANCH_COLS["from"], lineno, int, "from bus")
        t = _field(card, _BRANCH_COLS["to"], lineno, int, "to bus")
        for b in (f, t):
            if b not in index:
                raise CaseParseError(f"branch references unknown bus {b}", lineno)
        if f == t:
            raise CaseParseError("branch connects a bus to itself", lineno)
        r = _field(card, _BRANCH_COLS["r"], lineno, float, "resistance")
        x = _field(card, _BRANCH_COLS["x"], lineno, float, "reactance")
        bc = _field(card, _BRANCH_COLS["b"], lineno, float, "charging")
        ratio = _field(card, _BRANCH_COLS["ratio"], lineno, float, "tap ratio")
        if x == 0:
            raise CaseParseError("branch has zero reactance", lineno)
        i, j = index[f], index[t]
        key = frozenset((i, j))
        y = 1.0 / complex(r, x)
        if key in merged:
            entry = merged[key]
            entry[2] += y
            entry[3] += bc
        else:
            merged[key] = [i, j, y, bc, ratio]
            order.append(key)

    lines_out = []
    for key in order:
        i, j, y, bc, ratio = merged[key]
        z = 1.0 / y
        lines_out.append(Line(i, j, z.real, z.imag, bc, ratio))

    try:
        return GridNetwork(tuple(buses), tuple(lines_out), ref, base_mva, title)
    except NetworkError as exc:
        raise CaseParseError(str(exc), branch_line) from exc


def _fmt(value: float, width: int, decimals: int) -> str:
    s = f"{value:{width}.{decimals}f}"
    if len(s) > width:
        s = f"{value:{width}.{max(decimals - (len(s) - width), 0)}f}"
    return s


def write_ieee_cdf(net: GridNetwork, *, loads=None, generation=None, shunts=None) -> str:
    """Serialize a network to fixed-column CDF text.

    Optional ``loads``/``generation`` ((P, Q) MW/MVAr per bus) and ``shunts``
    ((G, B) p.u. per bus) are written when given; they are not part of the
    :class:`GridNetwork` model and are ignored by :func:`parse_ieee_cdf`.
    """
    nb = net.n_buses
    loads = loads if loads is not None else np.zeros((nb, 2))
    generation = generation if generation is not None else np.zeros((nb, 2))
    shunts = shunts if shunts is not None else np.zeros((nb, 2))
    ref_deg = 0.0
    title = (net.title or " 01/01/00 GRIDFRAME").ljust(80)
    title = title[:31] + _fmt(net.base_mva, 6, 1) + title[37:]
    out = [title.rstrip()]
    out.append(f"BUS DATA FOLLOWS                            {nb} ITEMS")
    for b in net.buses:
        card = [" "] * 128
        def put(cols, text):
            lo, hi = cols
            text = text.rjust(hi - lo)[: hi - lo]
            card[lo:hi] = list(text)
        put(_BUS_COLS["number"], str(b.name))
        card[5:17] = list((b.label or f"Bus {b.name}").ljust(12)[:12])
        put(_BUS_COLS["area"], "1")
        put(_BUS_COLS["zone"], "1")
        put(_BUS_COLS["type"], str(b.bus_type))
        put(_BUS_COLS["vm"], _fmt(b.operating_magnitude, 6, 3))
        put(_BUS_COLS["va"], _fmt(math.degrees(b.operating_angle) + ref_deg, 7, 2))
        put(_BUS_COLS["pd"], _fmt(loads[b.id][0], 9, 1))
        put(_BUS_COLS["qd"], _fmt(loads[b.id][1], 9, 1))
        put(_BUS_COLS["pg"], _fmt(generation[b.id][0], 9, 1))
        put(_BUS_COLS["qg"], _fmt(generation[b.id][1], 8, 1))
        put(_BUS_COLS["base_kv"], _fmt(b.base_voltage, 7, 1))
        put(_BUS_COLS["vset"], _fmt(b.operating_magnitude if b.bus_type >= 2 else 0.0, 6, 3))
        put(_BUS_COLS["qmax"], _fmt(0.0, 8, 1))
        put(_BUS_COLS["qmin"], _fmt(0.0, 8, 1))
        put(_BUS_COLS["gs"], _fmt(shunts[b.id][0], 8, 4))
        put(_BUS_COLS["bs"], _fmt(shunts[b.id][1], 8, 4))
        put(_BUS_COLS["remote"], "0")
        out.append("".join(card).rstrip())
    out.append("-999")
    out.append(f"BRANCH DATA FOLLOWS                         {net.n_lines} ITEMS")
    for ln in net.lines:
        card = [" "] * 126
        def put(cols, text):
            lo, hi = cols
            text = text.rjust(hi - lo)[: hi - lo]
            card[lo:hi] = list(text)
        put(_BRANCH_COLS["from"], str(net.buses[ln.from_bus].name))
        put(_BRANCH_COLS["to"], str(net.buses[ln.to_bus].name))
        put(_BRANCH_COLS["area"], "1")
        put(_BRANCH_COLS["zone"], "1")
        put(_BRANCH_COLS["circuit"], "1")
        put(_BRANCH_COLS["type"], "1" if ln.tap_ratio else "0")
        put(_BRANCH_COLS["r"], _fmt(ln.series_resistance, 10, 6))
        put(_BRANCH_COLS["x"], _fmt(ln.series_reactance, 11, 6))
        put(_BRANCH_COLS["b"], _fmt(ln.shunt_charging, 10, 5))
        put(_BRANCH_COLS["rate1"], "0")
        put(_BRANCH_COLS["rate2"], "0")
        put(_BRANCH_COLS["rate3"], "0")
        put(_BRANCH_COLS["ctrl"], "0")
        put(_BRANCH_COLS["side"], "0")
        put(_BRANCH_COLS["ratio"], _fmt(ln.tap_ratio, 6, 4))
        put(_BRANCH_COLS["angle"], _fmt(0.0, 7, 1))
        out.append("".join(card).rstrip())
    out.append("-999")
    out.append("LOSS ZONES FOLLOWS                     1 ITEMS")
    out.append("  1 IEEE")
    out.append("-99")
    out.append("INTERCHANGE DATA FOLLOWS                 1 ITEMS")
    out.append(" 1    1 Area 1       0.0     999.99  IEEE  IEEE")
    out.append("-9")
    out.append("TIE LINES FOLLOW                     0 ITEMS")
    out.append("-999")
    out.append("END OF DATA")
    return "\n".join(out) + "\n"


BUILTIN_CASES = {"ieee14": "ieee14.cdf", "ieee118": "ieee118.cdf"}


def load_case(case: str | Path) -> GridNetwork:
    """Load a builtin case by name (``ieee14``, ``ieee118``) or a CDF file path."""
    key = str(case).lower()
    if key in BUILTIN_CASES:
        text = resources.files("gridframe.data").joinpath(BUILTIN_CASES[key]).read_text()
    else:
        text = Path(case).read_text()
    return parse_ieee_cdf(text)
