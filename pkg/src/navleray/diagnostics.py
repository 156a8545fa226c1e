"""Measured counterparts of the contraction and growth-bound statements.

Everything here reads fields, trajectories or run ledgers and produces
numbers, tables or report documents; nothing mutates solver state.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotFreeSpaceError
from .fields import (
    LocalTrajectory,
    VectorField,
    decay_exponent,
    hat_sobolev_sq,
    rfft,
    spectral,
    time_derivative,
)
from .kernels import leray_source, nonlinear_hats

FIT_KINDS = ("uniform", "linear", "sqrt")


@dataclass
class RunLedger:
    config: dict
    reports: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    final_velocity: VectorField | None = None
    final_control: VectorField | None = None

    @property
    def physical_time(self) -> float:
        return float(sum(r.rho for r in self.reports))

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports], dtype=float)


@dataclass
class BoundFit:
    kind: str
    intercept: float
    slope: float
    max_residual: float
    value_range: float

    def residual_fraction(self) -> float:
        """max residual relative to the spread of the series (0 for flat series)."""
        if self.value_range == 0.0:
            return 0.0 if self.max_residual == 0.0 else math.inf
        return self.max_residual / self.value_range

    def to_dict(self) -> dict:
        return {"kind": self.kind, "intercept": self.intercept, "slope": self.slope,
                "max_residual": self.max_residual, "value_range": self.value_range}


def leray_sup(v: VectorField, dealias: bool = True) -> float:
    return float(np.abs(leray_source(v, dealias).data).max())


def fit_bound(series, kind: str, steps=None) -> BoundFit:
    """Least-squares fit of c, a + b l or a + b sqrt(l) to a per-step series.

    `steps` defaults to l = 1, 2, ...
    """
    if kind not in FIT_KINDS:
        raise ValueError(f"fit kind must be one of {FIT_KINDS}")
    y = np.asarray(series, dtype=float)
    if y.size == 0:
        raise ValueError("empty series")
    l = np.arange(1, y.size + 1, dtype=float) if steps is None else np.asarray(steps, float)
    if kind == "uniform":
        a, b = float(np.mean(y)), 0.0
        model = np.full_like(y, a)
    else:
        x = l if kind == "linear" else np.sqrt(l)
        A = np.column_stack([np.ones_like(x), x])
        (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
        a, b = float(a), float(b)
        model = a + b * x
    return BoundFit(kind, a, b, float(np.abs(y - model).max()), float(y.max() - y.min()))


def nse_residual(traj: LocalTrajectory, cfg, rho: float) -> float:
    """max over interior nodes of the L^2 residual of the local equation.

    The residual is d_tau v - rho nu Lap v + rho (v . grad) v - rho Leray(v),
    with d_tau from centered node differences.
    """
    grid = traj.grid
    sp = spectral(grid)
    hats = rfft(traj.data)
    dt_hat = rfft(time_derivative(traj))
    worst = 0.0
    for j in range(1, traj.M):
        conv, ler = nonlinear_hats(hats[j], grid, cfg.dealias)
        res = dt_hat[j] + rho * cfg.nu * sp.k2 * hats[j] - rho * (conv + ler)
        worst = max(worst, float(np.sqrt(hat_sobolev_sq(res, grid, 0).max())))
    return worst


@dataclass
class DecayReport:
    m_target: float
    exponents: list
    notes: list
    passed: bool


def decay_inheritance(increments, m_target: float, fit_range=(2.0, 12.0), *,
                      boundary_tol: float | None = 1e-6, max_exponent: float = 12.0) -> DecayReport:
    """Check every component of every increment decays at order >= m_target - 0.5.

    Components that are identically zero are skipped; a component that is
    not negligible at the box boundary fails with a note.
    """
    exps, notes, ok = [], [], True
    for k, inc in enumerate(increments, start=2):
        row = []
        for i, comp in enumerate(inc.components):
            if not np.any(comp.values):
                row.append(None)
                continue
            try:
                e = decay_exponent(comp, fit_range, boundary_tol=boundary_tol,
                                   max_exponent=max_exponent)
            except NotFreeSpaceError as exc:
                notes.append(f"k={k} component {i}: {exc}")
                row.append(float("nan"))
                ok = False
                continue
            row.append(e)
            if e < m_target - 0.5:
                ok = False
        exps.append(row)
    return DecayReport(m_target, exps, notes, ok)


TABLE_HEADER = ["l", "k", "ratio", "squared_ratio", "increment_norm", "pass"]


def contraction_table(reports) -> list[dict]:
    """Rows per step and sub-iteration; k=1 rows test the 1/4 smallness bound."""
    rows = []
    for r in reports:
        rows.append({"l": r.l, "k": 1, "ratio": None, "squared_ratio": None,
                     "increment_norm": r.first_increment_norm,
                     "pass": r.first_increment_norm <= 0.25})
        for k, (q, q2) in enumerate(zip(r.ratios, r.squared_ratios), start=2):
            rows.append({"l": r.l, "k": k, "ratio": q, "squared_ratio": q2,
                         "increment_norm": None, "pass": q <= 0.5 and q2 <= 0.5})
    return rows


def table_passes(rows) -> bool:
    return all(r["pass"] for r in rows)


# -- serialization ---------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps_report(obj) -> str:
    """JSON with floats written at 17 significant digits."""
    return _fmt(obj) + "\n"


def report_document(ledger: RunLedger, fits: dict | None = None,
                    pass_flags: dict | None = None) -> dict:
    return {
        "config": ledger.config,
        "constants": ledger.constants,
        "physical_time": ledger.physical_time,
        "steps": [r.to_dict() for r in ledger.reports],
        "fits": [dict(name=k, **f.to_dict()) for k, f in (fits or {}).items()],
        "pass_flags": pass_flags or {},
        "checkpoints": {str(k): str(v) for k, v in ledger.checkpoints.items()},
    }


def rows_to_csv(rows, header=None) -> str:
    header = header or (list(rows[0]) if rows else TABLE_HEADER)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if row.get(h) is None else _csv_cell(row.get(h)) for h in header])
    return buf.getvalue()


def _csv_cell(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return x


STEP_COLUMNS = ["l", "rho", "n_subiter", "status", "first_increment_norm", "c_prev",
                "hm_norm_end", "cm_norm_end", "control_norm", "velocity_sq_norm",
                "leray_sup", "leray_sup_controlled", "div_norm", "elapsed_time"]


def steps_to_csv(ledger: RunLedger) -> str:
    return rows_to_csv([r.to_dict() for r in ledger.reports], STEP_COLUMNS)
