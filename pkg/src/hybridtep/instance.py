"""Power system, scenario and plan types plus the JSON instance format.

Flow sign convention (used everywhere in the package): a positive flow on a
line runs from ``from_bus`` to ``to_bus``. In the balance equation of bus
``b`` a line leaving ``b`` contributes ``-f`` and a line entering ``b``
contributes ``+f``, so that ``sum(+-f) + g_bus = demand``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable

PROBABILITY_TOL = 1e-9


class RenewableKind(str, enum.Enum):
    NONE = "none"
    SOLAR = "solar"
    WIND = "wind"


class LineKind(str, enum.Enum):
    EXISTING = "existing"
    CANDIDATE = "candidate"


class InstanceError(Exception):
    pass


class InstanceFormatError(InstanceError):
    """The document could not be parsed; the message carries the locus."""


class InstanceValidationError(InstanceError):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("invalid instance:\n" + "\n".join(f"  - {d}" for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    entity: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    cost: float
    renewable_kind: RenewableKind = RenewableKind.NONE


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float
    capacity: float
    kind: LineKind
    parallel_index: int = 0
    invest_cost: float = 0.0
    twin_existing: int | None = None

    @property
    def is_candidate(self) -> bool:
        return self.kind is LineKind.CANDIDATE


@dataclass(frozen=True)
class Scenario:
    id: int
    probability: float
    demand: tuple[float, ...]
    gen_lower: tuple[float, ...]
    gen_upper: tuple[float, ...]


@dataclass(frozen=True)
class Plan:
    """Set of built candidate line ids."""

    built: frozenset[int] = frozenset()

    @classmethod
    def of(cls, ids: Iterable[int] = ()) -> "Plan":
        return cls(frozenset(int(k) for k in ids))

    def __len__(self) -> int:
        return len(self.built)

    def __contains__(self, k: object) -> bool:
        return k in self.built

    def __iter__(self):
        return iter(sorted(self.built))

    def with_(self, ids: Iterable[int]) -> "Plan":
        return Plan(self.built | frozenset(ids))

    def without(self, ids: Iterable[int]) -> "Plan":
        return Plan(self.built - frozenset(ids))


@dataclass(frozen=True)
class Instance:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    scenarios: tuple[Scenario, ...]
    name: str = "instance"

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @cached_property
    def existing_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.kind is LineKind.EXISTING)

    @cached_property
    def candidate_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.kind is LineKind.CANDIDATE)

    @cached_property
    def candidate_ids(self) -> tuple[int, ...]:
        return tuple(sorted(ln.id for ln in self.candidate_lines))

    @cached_property
    def line_by_id(self) -> dict[int, Line]:
        return {ln.id: ln for ln in self.lines}

    def all_candidates(self) -> Plan:
        return Plan.of(self.candidate_ids)

    def scenario(self, s: int) -> Scenario:
        for sc in self.scenarios:
            if sc.id == s:
                return sc
        raise KeyError(f"unknown scenario {s}")


def plan_investment_cost(instance: Instance, plan: Plan) -> float:
    lines = instance.line_by_id
    total = 0.0
    for k in sorted(plan.built):
        ln = lines.get(k)
        if ln is None or not ln.is_candidate:
            raise KeyError(f"plan references unknown candidate line {k}")
        total += ln.invest_cost
    return total


def check_plan(instance: Instance, plan: Plan) -> None:
    unknown = plan.built - frozenset(instance.candidate_ids)
    if unknown:
        raise KeyError(f"plan references unknown candidate lines {sorted(unknown)}")


def default_penalty(instance: Instance) -> float:
    """Largest generation upper bound times its cost over all scenarios."""
    best = 0.0
    for sc in instance.scenarios:
        for gen in instance.generators:
            if gen.id < len(sc.gen_upper):
                best = max(best, sc.gen_upper[gen.id] * gen.cost)
    return best if best > 0 else 1.0


# -- validation ---------------------------------------------------------------

def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(instance: Instance) -> list[Diagnostic]:
    """Return one diagnostic per violated invariant; never raises."""
    out: list[Diagnostic] = []
    add = lambda entity, rule, detail="": out.append(Diagnostic(entity, rule, detail))  # noqa: E731

    bus_ids = [b.id for b in instance.buses]
    if sorted(bus_ids) != list(range(len(bus_ids))):
        add("buses", "bus ids must be dense 0..|B|-1 and unique", f"got {sorted(bus_ids)}")
    nb = len(bus_ids)
    valid_bus = set(bus_ids)

    gen_ids = [g.id for g in instance.generators]
    if sorted(gen_ids) != list(range(len(gen_ids))):
        add("generators", "generator ids must be dense 0..|E|-1 and unique", f"got {sorted(gen_ids)}")
    for g in instance.generators:
        if g.bus not in valid_bus:
            add(f"generator {g.id}", "bus must reference an existing bus", f"bus {g.bus}")
        if not _finite(g.cost) or g.cost < 0:
            add(f"generator {g.id}", "cost >= 0", f"cost {g.cost}")

    seen: set[int] = set()
    for ln in instance.lines:
        tag = f"{ln.kind.value} line {ln.id}"
        if ln.id in seen:
            add(tag, "line ids must be unique")
        seen.add(ln.id)
        if ln.from_bus not in valid_bus or ln.to_bus not in valid_bus:
            add(tag, "endpoints must reference existing buses", f"{ln.from_bus}->{ln.to_bus}")
        if ln.from_bus == ln.to_bus:
            add(tag, "from_bus != to_bus")
        if not _finite(ln.susceptance) or ln.susceptance == 0:
            add(tag, "susceptance != 0", f"{ln.susceptance}")
        if not _finite(ln.capacity) or ln.capacity <= 0:
            add(tag, "capacity > 0", f"{ln.capacity}")
        if ln.kind is LineKind.EXISTING:
            if ln.invest_cost != 0 or ln.twin_existing is not None:
                add(tag, "existing lines carry no investment cost and no twin")
        else:
            if not _finite(ln.invest_cost) or ln.invest_cost < 0:
                add(tag, "invest_cost >= 0", f"{ln.invest_cost}")
    lines = {ln.id: ln for ln in instance.lines}
    for ln in instance.candidate_lines:
        if ln.twin_existing is not None:
            twin = lines.get(ln.twin_existing)
            if twin is None or twin.kind is not LineKind.EXISTING:
                add(f"candidate line {ln.id}", "twin_existing must reference an existing line", f"{ln.twin_existing}")
    for kind in LineKind:
        groups: dict[tuple[int, int], list[int]] = {}
        for ln in instance.lines:
            if ln.kind is kind:
                groups.setdefault((ln.from_bus, ln.to_bus), []).append(ln.parallel_index)
        for pair, idx in groups.items():
            if len(set(idx)) != len(idx):
                add(f"{kind.value} lines {pair[0]}->{pair[1]}", "parallel_index must enumerate parallel lines uniquely")

    if not instance.scenarios:
        add("scenarios", "at least one scenario is required")
    ng = len(instance.generators)
    sc_ids = [sc.id for sc in instance.scenarios]
    if len(set(sc_ids)) != len(sc_ids):
        add("scenarios", "scenario ids must be unique")
    total_p = 0.0
    for sc in instance.scenarios:
        tag = f"scenario {sc.id}"
        if not _finite(sc.probability) or not 0 <= sc.probability <= 1:
            add(tag, "probability in [0, 1]", f"{sc.probability}")
        else:
            total_p += sc.probability
        if len(sc.demand) != nb:
            add(tag, "demand must list one value per bus", f"{len(sc.demand)} != {nb}")
        elif any(not _finite(d) or d < 0 for d in sc.demand):
            add(tag, "demand >= 0 at every bus")
        if len(sc.gen_lower) != ng or len(sc.gen_upper) != ng:
            add(tag, "generation bounds must list one value per generator")
        else:
            for i, (lo, hi) in enumerate(zip(sc.gen_lower, sc.gen_upper)):
                if not (_finite(lo) and _finite(hi)) or not 0 <= lo <= hi:
                    add(tag, "0 <= gen_lower <= gen_upper", f"generator {i}: [{lo}, {hi}]")
    if instance.scenarios and abs(total_p - 1.0) > PROBABILITY_TOL:
        add("scenarios", "probabilities must sum to 1", f"sum = {total_p:.12g}")
    return out


# -- serialization --------------------------------------------------------------

def _num(x: float) -> float | int:
    """Canonical float: 12 significant digits."""
    return float(f"{float(x):.12g}")


def to_document(instance: Instance) -> dict[str, Any]:
    return {
        "name": instance.name,
        "buses": [{"id": b.id, "name": b.name} for b in sorted(instance.buses, key=lambda b: b.id)],
        "generators": [
            {"id": g.id, "bus": g.bus, "cost": _num(g.cost), "renewable_kind": g.renewable_kind.value}
            for g in sorted(instance.generators, key=lambda g: g.id)
        ],
        "existing_lines": [_line_doc(ln) for ln in sorted(instance.existing_lines, key=lambda ln: ln.id)],
        "candidate_lines": [_line_doc(ln) for ln in sorted(instance.candidate_lines, key=lambda ln: ln.id)],
        "scenarios": [
            {
                "id": sc.id,
                "probability": _num(sc.probability),
                "demand": [_num(v) for v in sc.demand],
                "gen_lower": [_num(v) for v in sc.gen_lower],
                "gen_upper": [_num(v) for v in sc.gen_upper],
            }
            for sc in sorted(instance.scenarios, key=lambda s: s.id)
        ],
    }


def _line_doc(ln: Line) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": ln.id,
        "from_bus": ln.from_bus,
        "to_bus": ln.to_bus,
        "parallel_index": ln.parallel_index,
        "susceptance": _num(ln.susceptance),
        "capacity": _num(ln.capacity),
    }
    if ln.is_candidate:
        doc["invest_cost"] = _num(ln.invest_cost)
        doc["twin_existing"] = ln.twin_existing
    return doc


def serialize(instance: Instance) -> bytes:
    return (json.dumps(to_document(instance), sort_keys=True, indent=1) + "\n").encode()


def _get(doc: dict, key: str, where: str, kind: type | tuple[type, ...]) -> Any:
    if not isinstance(doc, dict):
        raise InstanceFormatError(f"{where}: expected an object")
    if key not in doc:
        raise InstanceFormatError(f"{where}.{key}: missing field")
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, kind):
        raise InstanceFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _numbers(vals: Any, where: str) -> tuple[float, ...]:
    if not isinstance(vals, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals):
        raise InstanceFormatError(f"{where}: expected a list of numbers")
    return tuple(float(v) for v in vals)


def from_document(doc: Any) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceFormatError("document: expected a JSON object at top level")
    num = (int, float)
    buses = tuple(
        Bus(_get(b, "id", f"buses[{i}]", int), str(b.get("name", "")))
        for i, b in enumerate(_get(doc, "buses", "document", list))
    )
    gens = []
    for i, g in enumerate(_get(doc, "generators", "document", list)):
        where = f"generators[{i}]"
        kind = g.get("renewable_kind", "none") if isinstance(g, dict) else "none"
        try:
            rk = RenewableKind(kind)
        except ValueError:
            raise InstanceFormatError(f"{where}.renewable_kind: unknown value {kind!r}") from None
        gens.append(Generator(_get(g, "id", where, int), _get(g, "bus", where, int), float(_get(g, "cost", where, num)), rk))
    lines = []
    for key, kind in (("existing_lines", LineKind.EXISTING), ("candidate_lines", LineKind.CANDIDATE)):
        for i, ln in enumerate(_get(doc, key, "document", list)):
            where = f"{key}[{i}]"
            twin = ln.get("twin_existing") if isinstance(ln, dict) else None
            if twin is not None and (isinstance(twin, bool) or not isinstance(twin, int)):
                raise InstanceFormatError(f"{where}.twin_existing: expected integer or null")
            lines.append(
                Line(
                    id=_get(ln, "id", where, int),
                    from_bus=_get(ln, "from_bus", where, int),
                    to_bus=_get(ln, "to_bus", where, int),
                    susceptance=float(_get(ln, "susceptance", where, num)),
                    capacity=float(_get(ln, "capacity", where, num)),
                    kind=kind,
                    parallel_index=int(ln.get("parallel_index", 0)),
                    invest_cost=float(_get(ln, "invest_cost", where, num)) if kind is LineKind.CANDIDATE else float(ln.get("invest_cost", 0.0)),
                    twin_existing=twin,
                )
            )
    scenarios = []
    for i, sc in enumerate(_get(doc, "scenarios", "document", list)):
        where = f"scenarios[{i}]"
        scenarios.append(
            Scenario(
                id=_get(sc, "id", where, int),
                probability=float(_get(sc, "probability", where, num)),
                demand=_numbers(_get(sc, "demand", where, list), f"{where}.demand"),
                gen_lower=_numbers(_get(sc, "gen_lower", where, list), f"{where}.gen_lower"),
                gen_upper=_numbers(_get(sc, "gen_upper", where, list), f"{where}.gen_upper"),
            )
        )
    return Instance(buses, tuple(gens), tuple(lines), tuple(scenarios), str(doc.get("name", "instance")))


def load_instance(content: bytes | str) -> Instance:
    """Parse and validate an instance document."""
    text = content.decode() if isinstance(content, (bytes, bytearray)) else content
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    instance = from_document(doc)
    diagnostics = validate(instance)
    if diagnostics:
        raise InstanceValidationError(diagnostics)
    return instance


def read_instance(path) -> Instance:
    with open(path, "rb") as fh:
        return load_instance(fh.read())


def write_instance(instance: Instance, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(instance))


def two_bus_instance(invest_cost: float = 10.0) -> Instance:
    """The two-bus fixture used throughout the docs and tests."""
    return Instance(
        buses=(Bus(0, "b0"), Bus(1, "b1")),
        generators=(Generator(0, 0, 1.0),),
        lines=(
            Line(0, 0, 1, 1.0, 30.0, LineKind.EXISTING),
            Line(1, 0, 1, 1.0, 30.0, LineKind.CANDIDATE, invest_cost=invest_cost, twin_existing=0),
        ),
        scenarios=(Scenario(0, 1.0, (0.0, 50.0), (0.0,), (100.0,)),),
        name="T2",
    )
