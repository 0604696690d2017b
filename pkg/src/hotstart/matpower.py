"""MATPOWER case files: parsing, validation and serialization.

Only the numeric-matrix subset of the format is understood::

    function mpc = case2
    mpc.baseMVA = 100;
    mpc.bus = [
        1  3  0   0  0 0 1 1.0 0 230 1 1.1 0.9;
        2  1  100 0  0 0 1 1.0 0 230 1 1.1 0.9;
    ];
    mpc.gen = [ ... ];
    mpc.branch = [ ... ];

Other assignments (``gencost``, ``bus_name``, ...) are skipped. Area, zone and
limit columns are read but not kept on the validated model.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    CaseValidationError,
    DanglingBranch,
    DuplicateBusId,
    MalformedRow,
    MissingGenerator,
    MissingSection,
    NoSlackBus,
    NonNumericToken,
    UnknownBusType,
    ZeroReactanceBranch,
)

REQUIRED_COLUMNS = {"bus": 13, "gen": 10, "branch": 13}

_FUNC_RE = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")
_SCALAR_RE = re.compile(r"^\s*(?:mpc\.)?baseMVA\s*=\s*([^;%]+);?")
_MATRIX_RE = re.compile(r"^\s*(?:mpc\.)?(\w+)\s*=\s*\[(.*)$")


@dataclass(frozen=True)
class RawCase:
    """Verbatim numeric content of a case file (1-based line numbers kept for errors)."""

    name: str
    base_mva: float
    bus_rows: list[tuple[float, ...]]
    gen_rows: list[tuple[float, ...]]
    branch_rows: list[tuple[float, ...]]
    bus_lines: list[int] = field(default_factory=list, compare=False, repr=False)


def _to_float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        lowered = tok.lower()
        if lowered in ("inf", "+inf"):
            return float("inf")
        if lowered == "-inf":
            return float("-inf")
        raise NonNumericToken(lineno, tok) from None


def parse_case(text: str, name: str | None = None) -> RawCase:
    """Parse MATPOWER case text into a :class:`RawCase`.

    Raises MissingSection, MalformedRow or NonNumericToken; nothing is
    silently dropped from the bus, gen and branch matrices.
    """
    base_mva = None
    sections: dict[str, list[tuple[float, ...]]] = {}
    lines_of: dict[str, list[int]] = {}
    current = None  # section name while inside "[ ... ]"
    case_name = name

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("%", 1)[0]
        if current is None:
            if not line.strip():
                continue
            m = _FUNC_RE.match(line)
            if m:
                if case_name is None:
                    case_name = m.group(1)
                continue
            m = _SCALAR_RE.match(line)
            if m:
                base_mva = _to_float(m.group(1).strip(), lineno)
                continue
            m = _MATRIX_RE.match(line)
            if not m:
                continue
            current = m.group(1)
            if current in sections:
                raise MalformedRow(current, lineno, "section assigned twice")
            sections[current] = []
            lines_of[current] = []
            line = m.group(2)

        closed = "]" in line
        if closed:
            line = line.split("]", 1)[0]
        if current in REQUIRED_COLUMNS:
            for chunk in line.split(";"):
                tokens = chunk.replace(",", " ").split()
                if not tokens:
                    continue
                row = tuple(_to_float(tok, lineno) for tok in tokens)
                if len(row) < REQUIRED_COLUMNS[current]:
                    raise MalformedRow(
                        current, lineno,
                        f"{len(row)} columns, need {REQUIRED_COLUMNS[current]}",
                    )
                sections[current].append(row)
                lines_of[current].append(lineno)
        if closed:
            current = None

    if current is not None:
        raise MalformedRow(current, lineno, "unterminated matrix")
    if base_mva is None:
        raise MissingSection("baseMVA")
    for sec in ("bus", "gen", "branch"):
        if sec not in sections:
            raise MissingSection(sec)
    if not base_mva > 0:
        raise MalformedRow("baseMVA", 0, f"baseMVA must be positive, got {base_mva}")
    return RawCase(
        name=case_name or "case",
        base_mva=base_mva,
        bus_rows=sections["bus"],
        gen_rows=sections["gen"],
        branch_rows=sections["branch"],
        bus_lines=lines_of["bus"],
    )


class BusType(enum.IntEnum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    btype: BusType
    pd: float
    qd: float
    gs: float
    bs: float
    vm: float
    va: float  # degrees
    base_kv: float


@dataclass(frozen=True)
class Gen:
    bus: int
    pg: float
    qg: float
    vg: float
    status: bool


@dataclass(frozen=True)
class Branch:
    f: int
    t: int
    r: float
    x: float
    b: float
    tap: float
    shift: float  # degrees
    status: bool


@dataclass(frozen=True)
class NetworkCase:
    """Validated network in case-file units (MW, MVAr, degrees) with 0-based indexing.

    Vector views used by the solvers are derived lazily and cached; the
    record tuples are the source of truth.
    """

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    gens: tuple[Gen, ...]
    branches: tuple[Branch, ...]
    index_map: dict[int, int] = field(compare=True)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_type(self) -> np.ndarray:
        return np.array([int(b.btype) for b in self.buses], dtype=np.int64)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.flatnonzero(self.bus_type == BusType.PQ)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.flatnonzero(self.bus_type == BusType.PV)

    @cached_property
    def slack(self) -> int:
        return int(np.flatnonzero(self.bus_type == BusType.SLACK)[0])

    @cached_property
    def pvpq(self) -> np.ndarray:
        return np.r_[self.pv, self.pq]

    @cached_property
    def non_slack(self) -> np.ndarray:
        return np.flatnonzero(self.bus_type != BusType.SLACK)

    @cached_property
    def pd(self) -> np.ndarray:
        return np.array([b.pd for b in self.buses])

    @cached_property
    def qd(self) -> np.ndarray:
        return np.array([b.qd for b in self.buses])

    @cached_property
    def gs(self) -> np.ndarray:
        return np.array([b.gs for b in self.buses])

    @cached_property
    def bs(self) -> np.ndarray:
        return np.array([b.bs for b in self.buses])

    @cached_property
    def vm(self) -> np.ndarray:
        return np.array([b.vm for b in self.buses])

    @cached_property
    def va_rad(self) -> np.ndarray:
        return np.deg2rad([b.va for b in self.buses])

    @cached_property
    def pg(self) -> np.ndarray:
        """In-service generation per bus in MW (multiple units summed)."""
        out = np.zeros(self.n_bus)
        for g in self.gens:
            if g.status:
                out[self.index_map[g.bus]] += g.pg
        return out

    @cached_property
    def qg(self) -> np.ndarray:
        out = np.zeros(self.n_bus)
        for g in self.gens:
            if g.status:
                out[self.index_map[g.bus]] += g.qg
        return out

    @cached_property
    def vg(self) -> np.ndarray:
        """Voltage setpoint per bus from its first in-service generator (NaN if none)."""
        out = np.full(self.n_bus, np.nan)
        for g in self.gens:
            i = self.index_map[g.bus]
            if g.status and np.isnan(out[i]):
                out[i] = g.vg
        return out

    @cached_property
    def branch_arrays(self) -> dict[str, np.ndarray]:
        """In-service branches only, as parallel arrays in file order."""
        live = [br for br in self.branches if br.status]
        return {
            "f": np.array([self.index_map[br.f] for br in live], dtype=np.int64),
            "t": np.array([self.index_map[br.t] for br in live], dtype=np.int64),
            "r": np.array([br.r for br in live]),
            "x": np.array([br.x for br in live]),
            "b": np.array([br.b for br in live]),
            "tap": np.array([br.tap for br in live]),
            "shift": np.deg2rad([br.shift for br in live]),
        }

    def with_demand(self, pd, qd) -> "NetworkCase":
        """Copy with bus demands replaced (MW / MVAr vectors of length L)."""
        buses = tuple(
            Bus(b.id, b.btype, float(p), float(q), b.gs, b.bs, b.vm, b.va, b.base_kv)
            for b, p, q in zip(self.buses, pd, qd)
        )
        return NetworkCase(self.name, self.base_mva, buses, self.gens, self.branches,
                           dict(self.index_map))


def validate(raw: RawCase) -> NetworkCase:
    """Check a parsed case and build the indexed :class:`NetworkCase`."""
    index_map: dict[int, int] = {}
    buses = []
    for row in raw.bus_rows:
        bus_id = int(row[0])
        if bus_id in index_map:
            raise DuplicateBusId(bus_id)
        code = int(row[1])
        if code not in (1, 2, 3):
            raise UnknownBusType(bus_id, code)
        index_map[bus_id] = len(buses)
        buses.append(Bus(
            id=bus_id, btype=BusType(code), pd=row[2], qd=row[3], gs=row[4],
            bs=row[5], vm=row[7], va=row[8], base_kv=row[9],
        ))

    n_slack = sum(1 for b in buses if b.btype == BusType.SLACK)
    if n_slack != 1:
        raise NoSlackBus(n_slack)

    gens = []
    for k, row in enumerate(raw.gen_rows):
        bus_id = int(row[0])
        if bus_id not in index_map:
            raise CaseValidationError(f"generator {k} sits on unknown bus {bus_id}")
        gens.append(Gen(bus=bus_id, pg=row[1], qg=row[2], vg=row[5], status=row[7] > 0))

    branches = []
    for k, row in enumerate(raw.branch_rows):
        f, t = int(row[0]), int(row[1])
        if f not in index_map or t not in index_map:
            raise DanglingBranch(f, t)
        status = row[10] > 0
        if status and row[3] == 0:
            raise ZeroReactanceBranch(k)
        branches.append(Branch(
            f=f, t=t, r=row[2], x=row[3], b=row[4],
            tap=row[8] if row[8] != 0 else 1.0, shift=row[9], status=status,
        ))

    powered = {g.bus for g in gens if g.status}
    for b in buses:
        if b.btype != BusType.PQ and b.id not in powered:
            raise MissingGenerator(b.id)

    return NetworkCase(
        name=raw.name, base_mva=raw.base_mva, buses=tuple(buses),
        gens=tuple(gens), branches=tuple(branches), index_map=index_map,
    )


def to_case_text(net: NetworkCase) -> str:
    """Serialize back to MATPOWER text; ``validate(parse_case(...))`` inverts it exactly.

    Columns the model does not keep (area, zone, limits, ratings) are written
    with neutral defaults.
    """
    r = repr
    out = [f"function mpc = {net.name}", "mpc.version = '2';", f"mpc.baseMVA = {r(net.base_mva)};", ""]
    out.append("%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin")
    out.append("mpc.bus = [")
    for b in net.buses:
        out.append("\t" + "\t".join([
            str(b.id), str(int(b.btype)), r(b.pd), r(b.qd), r(b.gs), r(b.bs), "1",
            r(b.vm), r(b.va), r(b.base_kv), "1", "1.1", "0.9",
        ]) + ";")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in net.gens:
        out.append("\t" + "\t".join([
            str(g.bus), r(g.pg), r(g.qg), "9999", "-9999", r(g.vg),
            r(net.base_mva), "1" if g.status else "0", "9999", "0",
        ]) + ";")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax",
            "mpc.branch = ["]
    for br in net.branches:
        out.append("\t" + "\t".join([
            str(br.f), str(br.t), r(br.r), r(br.x), r(br.b), "0", "0", "0",
            r(br.tap), r(br.shift), "1" if br.status else "0", "-360", "360",
        ]) + ";")
    out += ["];", ""]
    return "\n".join(out)


def builtin_case_path(name: str) -> Path:
    """Path of a bundled case (``case9``, ``case14``, ``case118``, ``case2869pegase``)."""
    stem = name[:-2] if name.endswith(".m") else name
    res = resources.files("hotstart").joinpath("cases", f"{stem}.m")
    if not res.is_file():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return Path(str(res))


def load_case(path_or_name) -> NetworkCase:
    """Read and validate a case from a path, falling back to the bundled cases."""
    path = Path(path_or_name)
    if not path.is_file():
        path = builtin_case_path(str(path_or_name))
    return validate(parse_case(path.read_text(encoding="utf-8")))
