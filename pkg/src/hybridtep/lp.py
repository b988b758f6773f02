"""Sparse linear programs and a bounded-variable revised simplex.

Every row ``lo <= a.x <= hi`` is handled through a logical variable
``s = a.x`` carrying the row range as its bounds, so the solver works on the
computational form ``A x - s = 0`` with box constraints on every column.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

INF = math.inf

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-10
REFACTOR_EVERY = 64
MAX_RECOVERIES = 3

_BASIC, _AT_LO, _AT_HI, _FREE = 0, 1, 2, 3


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class LpError(Exception):
    pass


class LpNumericalError(LpError):
    """Tolerances could not be met after the allowed refactorizations."""


@dataclass
class Basis:
    """Warm-start information: basic column indices and nonbasic statuses."""

    head: np.ndarray
    status: np.ndarray

    def copy(self) -> "Basis":
        return Basis(self.head.copy(), self.status.copy())


@dataclass
class LpSolution:
    status: LpStatus
    values: np.ndarray
    objective: float
    iterations: int = 0
    basis: Basis | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class LinearProgram:
    """A minimization LP with sparse rows and ranged bounds.

    Variables and rows are appended through :meth:`add_var` and
    :meth:`add_row`; bounds may be changed afterwards with
    :meth:`set_var_bounds` without touching the coefficient matrix.
    """

    def __init__(self) -> None:
        self._cost: list[float] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self.var_names: list[str] = []
        self.rows: list[tuple[np.ndarray, np.ndarray]] = []
        self.row_lo: list[float] = []
        self.row_hi: list[float] = []
        self.row_names: list[str] = []
        self._dense: np.ndarray | None = None

    @property
    def num_vars(self) -> int:
        return len(self._cost)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def add_var(self, lo: float = 0.0, hi: float = INF, cost: float = 0.0, name: str = "") -> int:
        if lo > hi:
            raise ValueError(f"variable {name!r}: lo {lo} > hi {hi}")
        self._cost.append(float(cost))
        self._lo.append(float(lo))
        self._hi.append(float(hi))
        self.var_names.append(name or f"x{len(self._cost) - 1}")
        self._dense = None
        return len(self._cost) - 1

    def add_row(
        self,
        coefs: Mapping[int, float] | Iterable[tuple[int, float]],
        lo: float = -INF,
        hi: float = INF,
        name: str = "",
    ) -> int:
        if lo > hi:
            raise ValueError(f"row {name!r}: lo {lo} > hi {hi}")
        items = coefs.items() if isinstance(coefs, Mapping) else coefs
        merged: dict[int, float] = {}
        for j, v in items:
            if not 0 <= j < self.num_vars:
                raise IndexError(f"row {name!r} references variable {j} (have {self.num_vars})")
            merged[j] = merged.get(j, 0.0) + float(v)
        idx = np.fromiter(merged.keys(), dtype=np.int64, count=len(merged))
        val = np.fromiter(merged.values(), dtype=float, count=len(merged))
        self.rows.append((idx, val))
        self.row_lo.append(float(lo))
        self.row_hi.append(float(hi))
        self.row_names.append(name or f"r{len(self.rows) - 1}")
        self._dense = None
        return len(self.rows) - 1

    def set_cost(self, var: int, cost: float) -> None:
        self._check_var(var)
        self._cost[var] = float(cost)

    def cost(self, var: int) -> float:
        return self._cost[var]

    def bounds(self, var: int) -> tuple[float, float]:
        return self._lo[var], self._hi[var]

    def set_var_bounds(self, var: int, lo: float, hi: float) -> None:
        self._check_var(var)
        if lo > hi:
            raise ValueError(f"lo {lo} > hi {hi}")
        self._lo[var] = float(lo)
        self._hi[var] = float(hi)

    def _check_var(self, var: int) -> None:
        if not 0 <= var < self.num_vars:
            raise IndexError(f"variable {var} out of range (have {self.num_vars})")

    @property
    def objective(self) -> np.ndarray:
        return np.asarray(self._cost, dtype=float)

    @property
    def var_lo(self) -> np.ndarray:
        return np.asarray(self._lo, dtype=float)

    @property
    def var_hi(self) -> np.ndarray:
        return np.asarray(self._hi, dtype=float)

    def matrix(self) -> np.ndarray:
        """Dense row matrix, cached until the structure changes."""
        if self._dense is None or self._dense.shape != (self.num_rows, self.num_vars):
            a = np.zeros((self.num_rows, self.num_vars))
            for i, (idx, val) in enumerate(self.rows):
                a[i, idx] = val
            self._dense = a
        return self._dense

    def copy(self) -> "LinearProgram":
        other = LinearProgram()
        other._cost = list(self._cost)
        other._lo = list(self._lo)
        other._hi = list(self._hi)
        other.var_names = list(self.var_names)
        other.rows = list(self.rows)
        other.row_lo = list(self.row_lo)
        other.row_hi = list(self.row_hi)
        other.row_names = list(self.row_names)
        other._dense = self._dense
        return other

    def row_activity(self, values: np.ndarray) -> np.ndarray:
        return np.array([float(val @ values[idx]) for idx, val in self.rows])

    def max_violation(self, values: np.ndarray) -> float:
        """Largest bound or row violation of ``values`` (absolute)."""
        values = np.asarray(values, dtype=float)
        worst = 0.0
        if self.num_vars:
            worst = max(
                worst,
                float(np.max(np.maximum(self.var_lo - values, 0.0))),
                float(np.max(np.maximum(values - self.var_hi, 0.0))),
            )
        if self.num_rows:
            act = self.row_activity(values)
            worst = max(
                worst,
                float(np.max(np.maximum(np.asarray(self.row_lo) - act, 0.0))),
                float(np.max(np.maximum(act - np.asarray(self.row_hi), 0.0))),
            )
        return worst

    def to_lp_format(self) -> str:
        """Render in CPLEX LP text format (debugging aid)."""
        def term(v: float, name: str, first: bool) -> str:
            sign = "-" if v < 0 else ("" if first else "+")
            return f"{sign} {abs(v):.12g} {name}".strip()

        names = self.var_names
        out = ["Minimize", " obj:"]
        terms = [term(c, names[j], not k) for k, (j, c) in enumerate((j, c) for j, c in enumerate(self._cost) if c)]
        out[-1] += " " + (" ".join(terms) if terms else "0")
        out.append("Subject To")
        for (idx, val), lo, hi, rname in zip(self.rows, self.row_lo, self.row_hi, self.row_names):
            lhs = " ".join(term(v, names[j], k == 0) for k, (j, v) in enumerate(zip(idx, val))) or "0 " + names[0]
            if lo == hi:
                out.append(f" {rname}: {lhs} = {lo:.12g}")
                continue
            if lo > -INF:
                out.append(f" {rname}_lo: {lhs} >= {lo:.12g}")
            if hi < INF:
                out.append(f" {rname}_hi: {lhs} <= {hi:.12g}")
        out.append("Bounds")
        for name, lo, hi in zip(names, self._lo, self._hi):
            if lo == -INF and hi == INF:
                out.append(f" {name} free")
            else:
                lo_s = "-inf" if lo == -INF else f"{lo:.12g}"
                hi_s = "+inf" if hi == INF else f"{hi:.12g}"
                out.append(f" {lo_s} <= {name} <= {hi_s}")
        out.append("End")
        return "\n".join(out) + "\n"


def set_var_bounds(lp: LinearProgram, var: int, lo: float, hi: float) -> None:
    lp.set_var_bounds(var, lo, hi)


def solve_lp(
    lp: LinearProgram,
    *,
    basis: Basis | None = None,
    backend: str = "simplex",
    max_iter: int | None = None,
) -> LpSolution:
    """Minimize ``lp``.

    ``backend="simplex"`` runs the bundled revised simplex (optionally
    warm-started from ``basis``); ``backend="highs"`` delegates to SciPy's
    HiGHS interface when SciPy is installed.
    """
    if backend == "simplex":
        solver = _Simplex(lp.matrix(), lp.objective, lp.var_lo, lp.var_hi,
                          np.asarray(lp.row_lo, dtype=float), np.asarray(lp.row_hi, dtype=float))
        return solver.run(basis, max_iter)
    if backend == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown LP backend {backend!r}")


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    a = lp.matrix()
    rlo = np.asarray(lp.row_lo)
    rhi = np.asarray(lp.row_hi)
    eq = rlo == rhi
    ub_rows, ub_rhs = [], []
    for i in np.flatnonzero(~eq):
        if rhi[i] < INF:
            ub_rows.append(a[i])
            ub_rhs.append(rhi[i])
        if rlo[i] > -INF:
            ub_rows.append(-a[i])
            ub_rhs.append(-rlo[i])
    n = lp.num_vars
    res = linprog(
        lp.objective,
        A_ub=np.array(ub_rows) if ub_rows else None,
        b_ub=np.array(ub_rhs) if ub_rhs else None,
        A_eq=a[eq] if eq.any() else None,
        b_eq=rlo[eq] if eq.any() else None,
        bounds=[(None if lo == -INF else lo, None if hi == INF else hi) for lo, hi in zip(lp.var_lo, lp.var_hi)],
        method="highs",
    )
    status = {0: LpStatus.OPTIMAL, 1: LpStatus.ITERATION_LIMIT, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}.get(res.status)
    if status is None:
        raise LpNumericalError(res.message)
    values = np.asarray(res.x, dtype=float) if res.x is not None else np.full(n, np.nan)
    obj = float(lp.objective @ values) if status is LpStatus.OPTIMAL else math.nan
    return LpSolution(status, values, obj, int(getattr(res, "nit", 0)))


class _Simplex:
    """Primal bounded-variable revised simplex on ``A x - s = 0``.

    Phase 1 minimizes the sum of bound infeasibilities of the basic
    variables (costs recomputed every iteration); phase 2 minimizes the
    true objective. The basis inverse is kept explicitly, updated with a
    rank-one eta step and recomputed every ``REFACTOR_EVERY`` pivots.
    """

    def __init__(self, a, c, lo, hi, rlo, rhi):
        self.a = a
        self.m, self.n = a.shape
        self.cost = np.concatenate([c, np.zeros(self.m)])
        self.lo = np.concatenate([lo, rlo])
        self.hi = np.concatenate([hi, rhi])

    # -- basis bookkeeping -------------------------------------------------

    def _column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.a[:, j]
        e = np.zeros(self.m)
        e[j - self.n] = -1.0
        return e

    def _basis_matrix(self) -> np.ndarray:
        b = np.zeros((self.m, self.m))
        for i, j in enumerate(self.head):
            if j < self.n:
                b[:, i] = self.a[:, j]
            else:
                b[j - self.n, i] = -1.0
        return b

    def _nonbasic_value(self, j: int, prefer: int) -> float:
        lo, hi = self.lo[j], self.hi[j]
        if prefer == _AT_HI and hi < INF:
            return hi
        if lo > -INF:
            return lo
        if hi < INF:
            return hi
        return 0.0

    def _status_of(self, j: int) -> int:
        v = self.x[j]
        if self.lo[j] > -INF and v == self.lo[j]:
            return _AT_LO
        if self.hi[j] < INF and v == self.hi[j]:
            return _AT_HI
        return _FREE

    def _slack_basis(self) -> None:
        total = self.n + self.m
        self.head = np.arange(self.n, total)
        self.status = np.full(total, _AT_LO, dtype=np.int8)
        self.x = np.zeros(total)
        for j in range(self.n):
            self.x[j] = self._nonbasic_value(j, _AT_LO)
            self.status[j] = self._status_of(j)
        self.status[self.head] = _BASIC

    def _install(self, basis: Basis | None) -> None:
        total = self.n + self.m
        if basis is None or len(basis.head) != self.m or len(basis.status) != total:
            self._slack_basis()
            return
        self.head = basis.head.copy()
        self.status = basis.status.copy()
        self.x = np.zeros(total)
        for j in np.flatnonzero(self.status != _BASIC):
            self.x[j] = self._nonbasic_value(j, int(self.status[j]))
            self.status[j] = self._status_of(j)

    def _refactor(self) -> bool:
        try:
            binv = np.linalg.inv(self._basis_matrix())
        except np.linalg.LinAlgError:
            return False
        if binv.size and (not np.all(np.isfinite(binv)) or np.max(np.abs(binv)) > 1e12):
            return False
        self.binv = binv
        self._recompute_basics()
        self.since_refactor = 0
        return True

    def _recompute_basics(self) -> None:
        nb = self.status != _BASIC
        xs = np.where(nb[: self.n], self.x[: self.n], 0.0)
        xl = np.where(nb[self.n:], self.x[self.n:], 0.0)
        r = self.a @ xs - xl
        self.x[self.head] = -self.binv @ r

    # -- main loop ---------------------------------------------------------

    def run(self, basis: Basis | None, max_iter: int | None) -> LpSolution:
        self._install(basis)
        recoveries = 0
        while not self._refactor():
            recoveries += 1
            if recoveries > MAX_RECOVERIES:
                raise LpNumericalError("singular starting basis")
            self._slack_basis()
        limit = max_iter if max_iter is not None else 50 * (self.n + self.m) + 1000
        it = 0
        stall = 0
        best_progress = INF
        bland = False
        last_phase1 = None
        while True:
            if it >= limit:
                return self._finish(LpStatus.ITERATION_LIMIT, it)
            if self.since_refactor >= REFACTOR_EVERY:
                if not self._refactor():
                    recoveries = self._recover(recoveries)
                    continue
            xb = self.x[self.head]
            lob, hib = self.lo[self.head], self.hi[self.head]
            below = xb < lob - FEAS_TOL
            above = xb > hib + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = above.astype(float) - below.astype(float)
                cn = np.zeros(self.n + self.m)
                progress = float(np.sum(np.where(below, lob - xb, 0.0)) + np.sum(np.where(above, xb - hib, 0.0)))
            else:
                cb = self.cost[self.head]
                cn = self.cost
                progress = float(self.cost[: self.n] @ self.x[: self.n])
            if phase1 != last_phase1:
                last_phase1 = phase1
                best_progress = INF
                stall = 0
                bland = False
            # anti-cycling: switch to Bland after num_vars steps without progress
            if best_progress == INF or progress < best_progress - 1e-12 * (1.0 + abs(best_progress)):
                best_progress = progress
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > max(self.n, 10):
                    bland = True
            y = cb @ self.binv
            d = cn.copy()
            d[: self.n] -= y @ self.a
            d[self.n:] += y
            q, sigma = self._price(d, bland)
            if q < 0:
                if phase1:
                    # confirm on a fresh factorization before declaring infeasibility
                    if self.since_refactor and self._refactor():
                        continue
                    return self._finish(LpStatus.INFEASIBLE, it)
                if self.since_refactor:
                    if not self._refactor():
                        recoveries = self._recover(recoveries)
                        continue
                    xb = self.x[self.head]
                    if np.any(xb < self.lo[self.head] - FEAS_TOL) or np.any(xb > self.hi[self.head] + FEAS_TOL):
                        continue
                return self._finish(LpStatus.OPTIMAL, it)
            it += 1
            alpha = self.binv @ self._column(q)
            rate = -sigma * alpha
            r, t, leave_at = self._ratio(rate, phase1, bland)
            flip = self.hi[q] - self.lo[q]
            if r < 0 and flip == INF:
                if phase1:
                    recoveries = self._recover(recoveries)
                    continue
                return self._finish(LpStatus.UNBOUNDED, it)
            if flip <= t:
                self.x[self.head] += rate * flip
                self.x[q] = self.hi[q] if sigma > 0 else self.lo[q]
                self.status[q] = _AT_HI if sigma > 0 else _AT_LO
                continue
            self.x[q] += sigma * t
            self.x[self.head] += rate * t
            leaving = self.head[r]
            self.x[leaving] = leave_at
            self.status[leaving] = self._status_of(leaving)
            self.status[q] = _BASIC
            self.head[r] = q
            piv = alpha[r]
            prow = self.binv[r] / piv
            self.binv -= np.outer(alpha, prow)
            self.binv[r] = prow
            self.since_refactor += 1

    def _recover(self, recoveries: int) -> int:
        recoveries += 1
        if recoveries > MAX_RECOVERIES:
            raise LpNumericalError("basis became singular repeatedly")
        self._slack_basis()
        if not self._refactor():
            raise LpNumericalError("slack basis could not be factorized")
        return recoveries

    def _price(self, d: np.ndarray, bland: bool) -> tuple[int, float]:
        st = self.status
        x = self.x
        can_inc = (st != _BASIC) & (x < self.hi)
        can_dec = (st != _BASIC) & (x > self.lo)
        inc = can_inc & (d < -OPT_TOL)
        dec = can_dec & (d > OPT_TOL)
        score = np.where(inc | dec, np.abs(d), 0.0)
        if not score.any():
            return -1, 0.0
        q = int(np.flatnonzero(score)[0]) if bland else int(np.argmax(score))
        return q, (1.0 if inc[q] else -1.0)

    def _ratio(self, rate: np.ndarray, phase1: bool, bland: bool) -> tuple[int, float, float]:
        """Harris two-pass ratio test; returns (row, step, leaving value)."""
        xb = self.x[self.head]
        lob = self.lo[self.head]
        hib = self.hi[self.head]
        down = rate < -PIVOT_TOL
        up = rate > PIVOT_TOL
        # bound each moving basic variable heads towards
        target = np.full(self.m, np.nan)
        if phase1:
            dn_above = down & (xb > hib + FEAS_TOL)
            up_below = up & (xb < lob - FEAS_TOL)
        else:
            dn_above = np.zeros(self.m, dtype=bool)
            up_below = np.zeros(self.m, dtype=bool)
        dn_feas = down & ~dn_above & (xb >= lob - FEAS_TOL) & (lob > -INF)
        up_feas = up & ~up_below & (xb <= hib + FEAS_TOL) & (hib < INF)
        target[dn_above] = hib[dn_above]
        target[up_below] = lob[up_below]
        target[dn_feas] = lob[dn_feas]
        target[up_feas] = hib[up_feas]
        blocking = ~np.isnan(target)
        if not blocking.any():
            return -1, INF, 0.0
        idx = np.flatnonzero(blocking)
        dist = np.abs(xb[idx] - target[idx])
        dist = np.where(
            ((rate[idx] < 0) & (xb[idx] < target[idx])) | ((rate[idx] > 0) & (xb[idx] > target[idx])),
            0.0,
            dist,
        )
        step = np.abs(rate[idx])
        ratios = dist / step
        if bland:
            tmin = ratios.min()
            ties = idx[ratios <= tmin + 1e-12 * (1.0 + tmin)]
            r = int(ties[np.argmin(self.head[ties])])
        else:
            relaxed = (dist + FEAS_TOL) / step
            tmax = relaxed.min()
            cand = ratios <= tmax
            pick = np.flatnonzero(cand)[np.argmax(step[cand])]
            r = int(idx[pick])
        t = max(float(abs(xb[r] - target[r]) / abs(rate[r])), 0.0)
        if ((rate[r] < 0) and (xb[r] < target[r])) or ((rate[r] > 0) and (xb[r] > target[r])):
            t = 0.0
        return r, t, float(target[r])

    def _finish(self, status: LpStatus, it: int) -> LpSolution:
        values = self.x[: self.n].copy()
        if status is LpStatus.OPTIMAL:
            # snap nonbasic values exactly onto bounds already; clip basics within tolerance
            values = np.minimum(np.maximum(values, self.lo[: self.n]), self.hi[: self.n])
            obj = float(self.cost[: self.n] @ values)
        else:
            obj = math.nan
        return LpSolution(status, values, obj, it, Basis(self.head.copy(), self.status.copy()))


def lp_from_dense(
    c: Sequence[float],
    a: Sequence[Sequence[float]],
    row_lo: Sequence[float],
    row_hi: Sequence[float],
    var_lo: Sequence[float],
    var_hi: Sequence[float],
) -> LinearProgram:
    """Convenience constructor used by tests and tools."""
    lp = LinearProgram()
    for cj, lo, hi in zip(c, var_lo, var_hi):
        lp.add_var(lo, hi, cj)
    for row, lo, hi in zip(a, row_lo, row_hi):
        lp.add_row({j: v for j, v in enumerate(row) if v != 0.0}, lo, hi)
    return lp
