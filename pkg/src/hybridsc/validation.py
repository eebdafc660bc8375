"""Finite-difference perturbation oracle and error statistics.

The oracle re-solves the power flow with one setpoint shifted and divides the
voltage change by the shift. It shares nothing with the closed-form path
except the power-flow solver itself, which is checked separately against
finite differences of its residuals.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .controls import ControlKind, ControlVariable
from .errors import ContractError, NonConvergence
from .grid import GridModel, NodeRole
from .powerflow import OperatingPoint, solve_pf
from .sensitivity import branch_currents

DELTA_P = 0.005
DELTA_V = 0.005
ORACLE_TOL = 1e-11

# Table-style description of each control class: (network, bus type)
CLASS_INFO = {
    ControlKind.AC_P: ("AC", "P-Q / PV", "P"),
    ControlKind.AC_Q: ("AC", "P-Q", "Q"),
    ControlKind.AC_VMAG: ("AC", "PV", "|E|"),
    ControlKind.DC_P: ("DC", "P", "P"),
    ControlKind.DC_V: ("DC", "V", "E"),
    ControlKind.IC_P: ("IC", "P-Q", "P"),
    ControlKind.IC_Q: ("IC", "P-Q / Vdc-Q", "Q"),
    ControlKind.IC_VDC: ("IC", "Vdc-Q", "E"),
}


@dataclass(frozen=True)
class PerturbationSpec:
    x: ControlVariable
    delta: float

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta == 0:
            raise ContractError(f"perturbation step must be finite and nonzero, got {self.delta}")

    def __str__(self) -> str:
        return f"{self.x.kind.value}[{self.x.index}{'' if self.x.phase is None else f'.{self.x.phase}'}] by {self.delta:g}"

    @classmethod
    def default(cls, x: ControlVariable, delta_p: float = DELTA_P, delta_v: float = DELTA_V):
        return cls(x, delta_v if x.is_voltage else delta_p)


@dataclass(frozen=True)
class NumericSC:
    """Finite-difference derivatives, shaped like :class:`SensitivityResult`."""

    x: ControlVariable
    du_ac: np.ndarray
    du_dc: np.ndarray
    di_ac: np.ndarray
    di_dc: np.ndarray


def _solve_shifted(grid, op, spec, shift, tol, max_iter):
    shifted = grid.with_setpoint(spec.x, grid.setpoint(spec.x) + shift)
    try:
        return shifted, solve_pf(shifted, op, tol=tol, max_iter=max_iter, check=False)
    except NonConvergence as exc:
        raise NonConvergence(exc.iterations, exc.final_norm, spec=spec) from None


def numeric_sc(
    grid: GridModel,
    op: OperatingPoint,
    spec: PerturbationSpec,
    *,
    central: bool = False,
    tol: float = ORACLE_TOL,
    max_iter: int = 50,
) -> NumericSC:
    """Finite-difference derivative of every voltage and branch current w.r.t. ``spec.x``.

    Forward mode shifts the setpoint by ``+delta`` and compares with ``op``;
    central mode shifts by ``+-delta/2``. Perturbed solves are warm-started
    from ``op``. ``op`` should be converged tighter than ``tol`` for the
    forward quotient to be meaningful.
    """
    grid.check_control(spec.x)
    d = spec.delta
    if central:
        g_hi, hi = _solve_shifted(grid, op, spec, d / 2, tol, max_iter)
        g_lo, lo = _solve_shifted(grid, op, spec, -d / 2, tol, max_iter)
    else:
        g_hi, hi = _solve_shifted(grid, op, spec, d, tol, max_iter)
        g_lo, lo = grid, op
    i_hi = branch_currents(g_hi, hi.e_ac, hi.e_dc)
    i_lo = branch_currents(g_lo, lo.e_ac, lo.e_dc)
    return NumericSC(
        spec.x,
        (hi.e_ac - lo.e_ac) / d,
        (hi.e_dc - lo.e_dc) / d,
        (i_hi[0] - i_lo[0]) / d,
        (i_hi[1] - i_lo[1]) / d,
    )


@dataclass(frozen=True)
class ErrorRow:
    control: str
    kind: ControlKind
    node: str
    phase: str
    quantity: str  # "re", "im" (AC voltage parts) or "dc"
    numeric: float
    analytic: float

    @property
    def error(self) -> float:
        return self.numeric - self.analytic


@dataclass(frozen=True)
class ClassSummary:
    """Signed statistics of one control class (errors are numeric minus analytic)."""

    kind: ControlKind
    network: str
    bus_type: str
    controls: tuple[str, ...]
    count: int
    mean: float
    max: float  # entry of largest magnitude, sign kept
    mean_abs: float
    max_abs: float

    @property
    def label(self) -> str:
        sym = CLASS_INFO[self.kind][2]
        return f"{sym} ({self.network} {self.bus_type})"


def summarize(rows, kind: ControlKind) -> ClassSummary:
    sel = [r for r in rows if r.kind is kind]
    if not sel:
        raise ContractError(f"no rows for class {kind.value}")
    err = np.array([r.error for r in sel])
    peak = np.abs(err).max()
    signed_peak = err[np.abs(err) == peak].max()  # +e wins a tie with -e, whatever the row order
    network, bus_type, _ = CLASS_INFO[kind]
    controls = tuple(dict.fromkeys(r.control for r in sel))
    return ClassSummary(
        kind, network, bus_type, controls, len(sel),
        float(err.mean()), float(signed_peak), float(np.abs(err).mean()), float(peak),
    )


@dataclass(frozen=True)
class ErrorReport:
    rows: tuple[ErrorRow, ...]
    classes: tuple[ClassSummary, ...]

    def by_kind(self, kind: ControlKind) -> ClassSummary:
        for c in self.classes:
            if c.kind is ControlKind(kind):
                return c
        raise KeyError(kind)

    @property
    def mean_abs(self) -> float:
        return float(np.mean([abs(r.error) for r in self.rows])) if self.rows else 0.0

    @property
    def max_abs(self) -> float:
        return max((abs(r.error) for r in self.rows), default=0.0)


def _rows(grid: GridModel, analytic, numeric) -> list[ErrorRow]:
    if analytic.x != numeric.x:
        raise ContractError(f"mismatched controls {analytic.x} and {numeric.x}")
    if np.shape(analytic.du_ac) != np.shape(numeric.du_ac) or np.shape(analytic.du_dc) != np.shape(numeric.du_dc):
        raise ContractError("analytic and numeric results have different dimensions")
    label = analytic.x.label(grid)
    out = []
    for i, node in enumerate(grid.ac_nodes):
        if node.role is NodeRole.AC_SLACK:
            continue
        for p, ph in enumerate("abc"):
            a, n = analytic.du_ac[i, p], numeric.du_ac[i, p]
            out.append(ErrorRow(label, analytic.x.kind, node.name, ph, "re", float(n.real), float(a.real)))
            out.append(ErrorRow(label, analytic.x.kind, node.name, ph, "im", float(n.imag), float(a.imag)))
    for j, node in enumerate(grid.dc_nodes):
        out.append(
            ErrorRow(label, analytic.x.kind, node.name, "", "dc", float(numeric.du_dc[j]), float(analytic.du_dc[j]))
        )
    return out


def compare(
    analytic,
    grid: GridModel,
    op: OperatingPoint,
    specs=None,
    *,
    numeric=None,
    central: bool = False,
    parallel: bool = False,
    delta_p: float = DELTA_P,
    delta_v: float = DELTA_V,
) -> ErrorReport:
    """Element-wise comparison of closed-form and finite-difference voltage derivatives.

    ``specs`` defaults to one :class:`PerturbationSpec` per analytic result
    with the default steps. Pass ``numeric`` (a list aligned with
    ``analytic``) to compare against precomputed derivatives instead.
    """
    analytic = list(analytic)
    if numeric is None:
        if specs is None:
            specs = [PerturbationSpec.default(r.x, delta_p, delta_v) for r in analytic]
        specs = list(specs)
        if len(specs) != len(analytic):
            raise ContractError("need one perturbation spec per analytic result")

        def run(spec):
            return numeric_sc(grid, op, spec, central=central)

        if parallel and len(specs) > 1:
            with ThreadPoolExecutor() as pool:
                numeric = list(pool.map(run, specs))
        else:
            numeric = [run(s) for s in specs]
    numeric = list(numeric)
    if len(numeric) != len(analytic):
        raise ContractError("analytic and numeric result lists differ in length")
    rows = [row for a, n in zip(analytic, numeric) for row in _rows(grid, a, n)]
    kinds = [k for k in ControlKind if any(r.kind is k for r in rows)]
    return ErrorReport(tuple(rows), tuple(summarize(rows, k) for k in kinds))


__all__ = [
    "CLASS_INFO",
    "ClassSummary",
    "DELTA_P",
    "DELTA_V",
    "ErrorReport",
    "ErrorRow",
    "NumericSC",
    "PerturbationSpec",
    "compare",
    "numeric_sc",
    "summarize",
]
