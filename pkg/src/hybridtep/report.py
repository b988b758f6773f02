"""Comparison tables: relative gaps between a reference and a candidate UB.

Gap (%) = 100 * (UB_candidate - UB_reference) / UB_reference, so negative
means the candidate found the cheaper plan. The average row averages each
column, gaps included (not the gap of the averages).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class Row:
    system: str
    reference: float
    candidate: float

    @property
    def gap(self) -> float:
        return gap(self.candidate, self.reference)


def gap(candidate: float, reference: float) -> float:
    if reference == 0:
        raise ValueError("reference UB is zero")
    return 100.0 * (candidate - reference) / reference


def average(rows: Sequence[Row]) -> Row:
    if not rows:
        raise ValueError("no rows")
    n = len(rows)
    return Row("Average", math.fsum(r.reference for r in rows) / n, math.fsum(r.candidate for r in rows) / n)


def average_gap(rows: Sequence[Row]) -> float:
    return math.fsum(r.gap for r in rows) / len(rows)


def read_pairs(text: str) -> list[Row]:
    """CSV with columns ``system,reference,candidate`` (header required)."""
    reader = csv.DictReader(io.StringIO(text))
    need = {"system", "reference", "candidate"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"pairs file needs columns {sorted(need)}")
    return [Row(r["system"], float(r["reference"]), float(r["candidate"])) for r in reader]


def pair_runs(reports: Iterable[dict], reference_mode: str = "baseline", candidate_mode: str = "ph") -> list[Row]:
    """Pair run reports of the same instance: one reference mode, one candidate mode."""
    ref: dict[str, float] = {}
    cand: dict[str, float] = {}
    for rep in reports:
        target = ref if rep["mode"] == reference_mode else cand if rep["mode"] == candidate_mode else None
        if target is None:
            continue
        name = rep["instance"]
        if name in target:
            raise ValueError(f"two {rep['mode']} reports for {name}")
        target[name] = float(rep["cost"]["total"])
    missing = sorted(set(ref) ^ set(cand))
    if missing:
        raise ValueError(f"unpaired reports for {missing}")
    return [Row(name, ref[name], cand[name]) for name in sorted(ref)]


def render(rows: Sequence[Row], reference: str = "BA", candidate: str = "PH") -> str:
    width = max([len("System"), len("Average")] + [len(r.system) for r in rows])
    head = f"{'System':<{width}}  {reference:>14}  {candidate + ' UB':>14}  {'Gap (%)':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.system:<{width}}  {r.reference:>14.2f}  {r.candidate:>14.2f}  {r.gap:>8.2f}")
    avg = average(rows)
    lines.append("-" * len(head))
    lines.append(f"{avg.system:<{width}}  {avg.reference:>14.2f}  {avg.candidate:>14.2f}  {average_gap(rows):>8.2f}")
    return "\n".join(lines) + "\n"


def to_document(rows: Sequence[Row]) -> dict:
    return {
        "rows": [
            {"system": r.system, "reference": r.reference, "candidate": r.candidate, "gap": round(r.gap, 2)}
            for r in rows
        ],
        "average": {
            "reference": average(rows).reference,
            "candidate": average(rows).candidate,
            "gap": round(average_gap(rows), 2),
        },
    }


def to_csv(rows: Sequence[Row]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["system", "reference", "candidate", "gap"])
    for r in rows:
        w.writerow([r.system, repr(r.reference), repr(r.candidate), f"{r.gap:.2f}"])
    w.writerow(["Average", repr(average(rows).reference), repr(average(rows).candidate), f"{average_gap(rows):.2f}"])
    return out.getvalue()


def load_reports(texts: Iterable[str]) -> list[dict]:
    return [json.loads(t) for t in texts]
