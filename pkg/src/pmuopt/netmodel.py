"""Power network model: case-file parsing, bus admittance matrix and topology queries.

Two plain-text table layouts are understood:

* MATPOWER-style ``mpc.bus = [ ... ];`` blocks with the standard column order
  (bus_i type Pd Qd Gs Bs area Vm Va ..., gen: bus Pg Qg ... status, branch:
  fbus tbus r x b rateA rateB rateC ratio angle status).
* A compact layout with sections headed ``bus``, ``gen`` and ``branch`` whose
  rows are ``id type Pd Qd Vm Va``, ``bus Pg Qg`` and
  ``from to r x b tap shift status``.

In both, angles are given in degrees and powers in MW/MVAr; they are converted
to radians and per-unit on load.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import re
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BusKind(enum.Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    voltage_mag: float
    voltage_ang: float
    p_inject: float
    q_inject: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    line_charging: float = 0.0
    tap_ratio: float = 0.0
    phase_shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    reference: int
    base_mva: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def index(self) -> dict[int, int]:
        """Map external bus id -> row index."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def reference_index(self) -> int:
        return self.index[self.reference]

    def in_service_lines(self) -> list[int]:
        return [i for i, br in enumerate(self.branches) if br.in_service]


@dataclass(frozen=True)
class AdmittanceMatrix:
    values: np.ndarray  # complex N x N
    bus_ids: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.values)


# --------------------------------------------------------------------------- parsing

_MPC_HEADER = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_PLAIN_HEADER = re.compile(r"^\s*(bus|gen|branch)\s*[:=]?\s*\[?\s*$", re.IGNORECASE)
_TABLES = ("bus", "gen", "branch")


def _strip_comment(line: str) -> str:
    return line.split("%", 1)[0].split("#", 1)[0]


def _tokens(text: str, lineno: int) -> list[float]:
    out = []
    for tok in re.split(r"[\s,]+", text.strip()):
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise CaseFormatError(f"cannot parse number {tok!r}", lineno) from None
    return out


def _read_tables(text: str) -> tuple[str, float, dict[str, list[tuple[int, list[float]]]]]:
    layout = None
    base_mva = 100.0
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if current is None:
            m = _MPC_HEADER.match(line)
            if m:
                key, rest = m.group(1), m.group(2)
                if key == "baseMVA":
                    vals = _tokens(rest.replace(";", ""), lineno)
                    if len(vals) != 1 or vals[0] <= 0:
                        raise CaseFormatError("baseMVA must be a single positive number", lineno)
                    base_mva = vals[0]
                elif key in _TABLES:
                    layout = layout or "matpower"
                    current = key
                    rest = rest.strip()
                    if not rest.startswith("["):
                        raise CaseFormatError(f"expected '[' after mpc.{key} =", lineno)
                    rest = rest[1:]
                    tables.setdefault(key, [])
                    current = _consume_rows(rest, lineno, key, tables)
                continue
            m = _PLAIN_HEADER.match(line)
            if m:
                layout = layout or "compact"
                current = m.group(1).lower()
                tables.setdefault(current, [])
                continue
            stripped = line.strip()
            if stripped.startswith("function") or stripped.startswith("mpc."):
                continue
            m = re.match(r"^\s*base_?mva\s*[:=]?\s*(.*)$", line, re.IGNORECASE)
            if m:
                vals = _tokens(m.group(1).replace(";", ""), lineno)
                if len(vals) != 1 or vals[0] <= 0:
                    raise CaseFormatError("baseMVA must be a single positive number", lineno)
                base_mva = vals[0]
                continue
            raise CaseFormatError(f"unexpected content {stripped!r}", lineno)
        else:
            if layout == "compact":
                m = _PLAIN_HEADER.match(line)
                if m:
                    current = m.group(1).lower()
                    tables.setdefault(current, [])
                    continue
                if line.strip() == ";":
                    current = None
                    continue
            current = _consume_rows(line, lineno, current, tables)
    if current is not None and layout == "matpower":
        raise CaseFormatError(f"unterminated mpc.{current} table")
    if layout is None:
        raise CaseFormatError("no bus/gen/branch tables found")
    return layout, base_mva, tables


def _consume_rows(text: str, lineno: int, table: str, tables) -> str | None:
    """Append the rows found in ``text``; return None once the table is closed."""
    closed = "]" in text
    body = text.split("]", 1)[0]
    for chunk in body.split(";"):
        vals = _tokens(chunk, lineno)
        if vals:
            tables[table].append((lineno, vals))
    return None if closed else table


def _need(vals: list[float], n: int, what: str, lineno: int) -> None:
    if len(vals) < n:
        raise CaseFormatError(f"{what} row needs at least {n} columns, got {len(vals)}", lineno)


def parse_case(text: str) -> Network:
    """Parse case-file text into a validated :class:`Network`."""
    layout, base_mva, tables = _read_tables(text)
    if layout == "matpower":
        bcols = dict(id=0, kind=1, pd=2, qd=3, vm=7, va=8, n=9)
        gcols = dict(bus=0, pg=1, qg=2, status=7, n=3)
        rcols = dict(f=0, t=1, r=2, x=3, b=4, tap=8, shift=9, status=10, n=11)
    else:
        bcols = dict(id=0, kind=1, pd=2, qd=3, vm=4, va=5, n=6)
        gcols = dict(bus=0, pg=1, qg=2, status=None, n=3)
        rcols = dict(f=0, t=1, r=2, x=3, b=4, tap=5, shift=6, status=7, n=8)

    if not tables.get("bus"):
        raise CaseFormatError("case has no bus rows")

    raw_buses = []
    seen: dict[int, int] = {}
    for lineno, vals in tables["bus"]:
        _need(vals, bcols["n"], "bus", lineno)
        bid = int(vals[bcols["id"]])
        if bid != vals[bcols["id"]] or bid <= 0:
            raise CaseFormatError(f"bus id must be a positive integer, got {vals[0]}", lineno)
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid} (first on line {seen[bid]})", lineno)
        seen[bid] = lineno
        try:
            kind = BusKind(int(vals[bcols["kind"]]))
        except ValueError:
            raise CaseFormatError(f"unknown bus type code {vals[bcols['kind']]}", lineno) from None
        vm = vals[bcols["vm"]]
        if not vm > 0:
            raise CaseFormatError(f"bus {bid} voltage magnitude must be positive", lineno)
        raw_buses.append([bid, kind, vm, vals[bcols["va"]], -vals[bcols["pd"]], -vals[bcols["qd"]]])

    row_of = {b[0]: i for i, b in enumerate(raw_buses)}
    for lineno, vals in tables.get("gen", []):
        _need(vals, gcols["n"], "gen", lineno)
        bid = int(vals[gcols["bus"]])
        if bid not in row_of:
            raise CaseFormatError(f"generator at unknown bus {bid}", lineno)
        if gcols["status"] is not None and len(vals) > gcols["status"] and vals[gcols["status"]] <= 0:
            continue
        raw_buses[row_of[bid]][4] += vals[gcols["pg"]]
        raw_buses[row_of[bid]][5] += vals[gcols["qg"]]

    buses = [
        Bus(bid, kind, vm, math.radians(va), p / base_mva, q / base_mva)
        for bid, kind, vm, va, p, q in raw_buses
    ]
    slack = [b.id for b in buses if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise CaseFormatError(f"expected exactly one slack bus, found {len(slack)}")

    branches = []
    for lineno, vals in tables.get("branch", []):
        _need(vals, rcols["n"] - 1, "branch", lineno)
        f, t = int(vals[rcols["f"]]), int(vals[rcols["t"]])
        for end in (f, t):
            if end not in row_of:
                raise CaseFormatError(f"branch endpoint {end} is not a bus", lineno)
        if f == t:
            raise CaseFormatError(f"branch {f}-{t} is a self loop", lineno)
        r, x, b = vals[rcols["r"]], vals[rcols["x"]], vals[rcols["b"]]
        if r == 0 and x == 0:
            raise CaseFormatError(f"branch {f}-{t} has zero impedance", lineno)
        if r < 0 or b < 0:
            raise CaseFormatError(f"branch {f}-{t} has negative resistance or charging", lineno)
        status = vals[rcols["status"]] if len(vals) > rcols["status"] else 1.0
        branches.append(Branch(
            f, t, r, x, b,
            tap_ratio=vals[rcols["tap"]],
            phase_shift=math.radians(vals[rcols["shift"]]),
            in_service=status > 0,
        ))

    return Network(tuple(buses), tuple(branches), slack[0], base_mva)


def load_case(path_or_name: str | Path) -> Network:
    """Load a case from a file path, or one of the bundled cases (``case9``, ``case14``, ``case39``)."""
    p = Path(path_or_name)
    if not p.exists() and p.suffix == "" and p.name in bundled_cases():
        text = resources.files("pmuopt.cases").joinpath(f"{p.name}.m").read_text()
    else:
        text = p.read_text()
    return parse_case(text)


def bundled_cases() -> list[str]:
    return sorted(
        f.name[:-2] for f in resources.files("pmuopt.cases").iterdir() if f.name.endswith(".m")
    )


def _exact_inverse(value: float, forward: Callable[[float], float], guess: float) -> float:
    """Nudge ``guess`` by a few ulps so that ``forward(result) == value`` when possible."""
    if forward(guess) == value:
        return guess
    lo = hi = guess
    for _ in range(8):
        lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
        for cand in (lo, hi):
            if forward(float(cand)) == value:
                return float(cand)
    return guess


def serialize_case(net: Network) -> str:
    """Write ``net`` in the compact layout; ``parse_case`` reproduces it exactly."""
    base = net.base_mva
    out = [f"baseMVA = {base!r}", "", "bus"]
    for b in net.buses:
        pd = _exact_inverse(b.p_inject, lambda v: -v / base, -b.p_inject * base)
        qd = _exact_inverse(b.q_inject, lambda v: -v / base, -b.q_inject * base)
        va = _exact_inverse(b.voltage_ang, math.radians, math.degrees(b.voltage_ang))
        out.append(f"{b.id} {b.kind.value} {pd!r} {qd!r} {b.voltage_mag!r} {va!r}")
    out.append(";")
    out.append("gen")
    out.append(";")
    out.append("branch")
    for br in net.branches:
        shift = _exact_inverse(br.phase_shift, math.radians, math.degrees(br.phase_shift))
        out.append(
            f"{br.from_bus} {br.to_bus} {br.resistance!r} {br.reactance!r} {br.line_charging!r} "
            f"{br.tap_ratio!r} {shift!r} {int(br.in_service)}"
        )
    out.append(";")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- Y-bus

def build_ybus(net: Network) -> AdmittanceMatrix:
    """Assemble the complex bus admittance matrix from in-service branches.

    Branch model is the usual pi-equivalent with an off-nominal tap ``t`` on
    the from-side: Yff = (ys + jb/2)/|t|^2, Ytt = ys + jb/2,
    Yft = -ys/conj(t), Ytf = -ys/t.
    """
    idx = net.index
    n = net.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.resistance, br.reactance)
        tap = br.tap_ratio if br.tap_ratio != 0 else 1.0
        tc = tap * np.exp(1j * br.phase_shift)
        ysh = 0.5j * br.line_charging
        y[f, f] += (ys + ysh) / (tap * tap)
        y[t, t] += ys + ysh
        y[f, t] += -ys / np.conj(tc)
        y[t, f] += -ys / tc
    return AdmittanceMatrix(y, tuple(net.bus_ids))


# --------------------------------------------------------------------------- topology

def remove_line(net: Network, line_index: int) -> Network:
    """Return a copy of ``net`` with branch ``line_index`` (0-based) taken out of service."""
    if not 0 <= line_index < len(net.branches):
        raise IndexError(f"no branch with index {line_index}")
    br = net.branches[line_index]
    if not br.in_service:
        raise ValueError(f"branch {line_index} is already out of service")
    branches = list(net.branches)
    branches[line_index] = dataclasses.replace(br, in_service=False)
    return dataclasses.replace(net, branches=tuple(branches))


def adjacency(net: Network) -> list[set[int]]:
    """Distinct in-service neighbours of every bus, by row index."""
    idx = net.index
    adj: list[set[int]] = [set() for _ in net.buses]
    for br in net.branches:
        if br.in_service:
            f, t = idx[br.from_bus], idx[br.to_bus]
            adj[f].add(t)
            adj[t].add(f)
    return adj


def is_connected(net: Network) -> bool:
    if net.n_bus == 0:
        return True
    adj = adjacency(net)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == net.n_bus


def in_service_count(net: Network) -> int:
    return sum(br.in_service for br in net.branches)


def bridge_lines(net: Network) -> list[int]:
    """In-service branches whose removal disconnects the network."""
    return [i for i in net.in_service_lines() if not is_connected(remove_line(net, i))]


def outage_lines(net: Network) -> list[int]:
    """In-service branches whose single outage leaves the network connected."""
    return [i for i in net.in_service_lines() if is_connected(remove_line(net, i))]


def bus_degrees(net: Network) -> list[tuple[int, int]]:
    adj = adjacency(net)
    return [(b.id, len(adj[i])) for i, b in enumerate(net.buses)]


def operating_point(net: Network):
    """Solved voltages shipped with the case, as an ``OperatingPoint``."""
    from pmuopt.jacobian import OperatingPoint

    return OperatingPoint(
        np.array([b.voltage_ang for b in net.buses]),
        np.array([b.voltage_mag for b in net.buses]),
    )
