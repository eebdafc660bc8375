"""Closed-form voltage and current sensitivity coefficients.

For a converged operating point the linearised power-flow equations give a
real system ``A u(x) = b(x)`` per control variable ``x``. ``A`` depends only on
the state, so it is assembled and factorised once and reused for every ``x``.

Voltage-controlled unknowns (DC-V nodes and the DC side of Vdc-Q converters)
keep an identity row in ``A``; their coupling columns are moved into
``pinned_columns`` so that ``A`` stays control independent and ``b(x)`` carries
the known derivative (``1`` for ``x`` itself, ``0`` otherwise).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controls import ControlKind, ControlVariable
from .errors import ContractError, SingularA, StructuralError, ZeroVoltageMagnitude
from .grid import GridModel, NodeRole
from .identities import FhIdentities, UnknownIndex, compute_fh, linearize
from .powerflow import OperatingPoint, factorize, solve_factored

RCOND_MIN = 1e-12

__all__ = [
    "RCOND_MIN",
    "ScSystem",
    "SensitivityResult",
    "all_sensitivities",
    "assemble_A",
    "assemble_b",
    "branch_currents",
    "compute_fh",
    "current_sensitivities",
    "solve_sc",
    "to_polar",
]


@dataclass(frozen=True, eq=False)
class ScSystem:
    """Factorised sensitivity matrix of one operating point."""

    grid: GridModel
    op: OperatingPoint
    index: UnknownIndex
    A: np.ndarray
    lu: tuple
    rcond: float
    pinned_columns: dict  # DC node -> column moved to the right-hand side
    fh: FhIdentities
    balanced: bool = False

    @property
    def size(self) -> int:
        return self.index.size


def _pinned_dc_nodes(grid: GridModel) -> list[int]:
    return [j for j, r in enumerate(grid.dc_role) if r in (NodeRole.DC_V, NodeRole.IC_VDCQ)]


def assemble_A(grid: GridModel, op: OperatingPoint, *, balanced: bool = False) -> ScSystem:
    """Build and factorise ``A`` at ``op``.

    ``balanced=True`` uses per-phase converter rows; it is only meaningful on
    a balanced operating point and exists as a cross-check of the default
    sequence-domain formulation.
    """
    fh = compute_fh(grid, op)
    a, idx = linearize(grid, op.e_ac, op.e_dc, fh, balanced=balanced)
    pinned = {}
    for j in _pinned_dc_nodes(grid):
        c = idx.dc(j)
        col = a[:, c].copy()
        col[c] = 0.0
        pinned[j] = col
        a[:, c] = 0.0
        a[c, c] = 1.0
    a.flags.writeable = False
    lu, rc = factorize(a)
    if not rc >= RCOND_MIN:
        raise SingularA(rc)
    return ScSystem(grid, op, idx, a, lu, rc, pinned, fh, balanced)


def assemble_b(sys: ScSystem, x: ControlVariable) -> np.ndarray:
    """Right-hand side for control ``x`` (see module docstring for pinned voltages)."""
    grid, idx = sys.grid, sys.index
    grid.check_control(x)
    b = np.zeros(idx.size)
    k = x.kind
    if k is ControlKind.AC_P:
        b[idx.re(x.index, x.phase)] = 1.0
    elif k is ControlKind.AC_Q:
        b[idx.im(x.index, x.phase)] = 1.0
    elif k is ControlKind.AC_VMAG:
        b[idx.im(x.index, x.phase)] = abs(sys.op.e_ac[x.index, x.phase])
    elif k is ControlKind.DC_P:
        b[idx.dc(x.index)] = 1.0
    elif k in (ControlKind.DC_V, ControlKind.IC_VDC):
        j = x.index if k is ControlKind.DC_V else grid.converters[x.index].dc_node
        b -= sys.pinned_columns[j]
        b[idx.dc(j)] = 1.0
    else:
        conv = grid.converters[x.index]
        l = conv.ac_node
        if sys.balanced:
            rows = idx.re_block(l) if k is ControlKind.IC_P else idx.im_block(l)
            b[rows] = 1.0 / 3.0
        else:
            b[idx.ic_rows(l)["p" if k is ControlKind.IC_P else "q"]] = 1.0
        if k is ControlKind.IC_P:
            b[idx.dc(conv.dc_node)] = -1.0
    return b


@dataclass(frozen=True, eq=False)
class SensitivityResult:
    """Derivatives of every nodal voltage and branch current w.r.t. one control.

    ``du_ac`` is complex ``(n_ac, 3)`` with zero slack rows; ``du_dc`` holds
    all DC nodes, pinned ones included. ``residual`` is ``|A u - b|inf``.
    """

    x: ControlVariable
    u: np.ndarray
    b: np.ndarray
    du_ac: np.ndarray
    du_dc: np.ndarray
    dmag_ac: np.ndarray
    dang_ac: np.ndarray
    di_ac: np.ndarray
    di_dc: np.ndarray
    residual: float
    extra: dict = field(default_factory=dict)

    @property
    def du_rect(self) -> tuple[np.ndarray, np.ndarray]:
        return self.du_ac, self.du_dc

    @property
    def du_polar(self) -> tuple[np.ndarray, np.ndarray]:
        return self.dmag_ac, self.dang_ac

    @property
    def di_branch(self) -> tuple[np.ndarray, np.ndarray]:
        return self.di_ac, self.di_dc

    def relative_residual(self) -> float:
        return self.residual / max(1.0, float(np.max(np.abs(self.b), initial=0.0)))


def to_polar(grid: GridModel, op: OperatingPoint, du_ac) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and angle (radians) derivatives from rectangular ones."""
    e = np.asarray(op.e_ac)
    du = np.asarray(du_ac, dtype=complex).reshape(e.shape)
    mag = np.abs(e)
    if e.size and np.any(mag == 0):
        i = int(np.argwhere(mag == 0)[0][0])
        raise ZeroVoltageMagnitude(grid.ac_nodes[i].name if grid is not None else str(i))
    prod = np.conj(e) * du
    return prod.real / mag, prod.imag / mag**2


def branch_currents(grid: GridModel, e_ac, e_dc) -> tuple[np.ndarray, np.ndarray]:
    """From-end branch currents: AC ``(n_branches, 3)`` complex and DC real."""
    e_ac = np.asarray(e_ac, dtype=complex).reshape(grid.n_ac, 3)
    e_dc = np.asarray(e_dc, dtype=float)
    ac = np.array(
        [br.series @ (e_ac[br.from_node] - e_ac[br.to_node]) + br.shunt_from @ e_ac[br.from_node]
         for br in grid.ac_branches],
        dtype=complex,
    ).reshape(len(grid.ac_branches), 3)
    dc = np.array(
        [br.conductance * (e_dc[br.from_node] - e_dc[br.to_node]) for br in grid.dc_branches], dtype=float
    )
    return ac, dc


def _select(branches, names, which, kind):
    if which is None:
        return list(range(len(branches)))
    out = []
    for b in which:
        if isinstance(b, str):
            if b not in names:
                raise StructuralError(f"unknown {kind} branch {b!r}")
            out.append(names.index(b))
        elif isinstance(b, (int, np.integer)) and 0 <= b < len(branches):
            out.append(int(b))
        else:
            raise StructuralError(f"unknown {kind} branch {b!r}")
    return out


def current_sensitivities(grid: GridModel, op, result, *, ac_branches=None, dc_branches=None):
    """Branch-current derivatives of ``result`` (a :class:`SensitivityResult` or
    a ``(du_ac, du_dc)`` pair).

    Current derivatives are linear in the voltage derivatives, so ``op`` is
    not needed for the value; it is accepted for call-site symmetry.
    ``ac_branches``/``dc_branches`` optionally select branches by index or
    name; an unknown selector raises :class:`StructuralError`.
    """
    if isinstance(result, SensitivityResult):
        du_ac, du_dc = result.du_ac, result.du_dc
    else:
        du_ac, du_dc = result
    ac_sel = _select(grid.ac_branches, [b.name for b in grid.ac_branches], ac_branches, "AC")
    dc_sel = _select(grid.dc_branches, [b.name for b in grid.dc_branches], dc_branches, "DC")
    di_ac, di_dc = branch_currents(grid, du_ac, du_dc)
    return di_ac[ac_sel], di_dc[dc_sel]


def solve_sc(sys: ScSystem, x: ControlVariable) -> SensitivityResult:
    b = assemble_b(sys, x)
    u = solve_factored(sys.lu, b)
    residual = float(np.max(np.abs(sys.A @ u - b), initial=0.0))
    zeros_ac = np.zeros((sys.grid.n_ac, 3), dtype=complex)
    du_ac, du_dc = sys.index.unpack(u, zeros_ac)
    dmag, dang = to_polar(sys.grid, sys.op, du_ac)
    di_ac, di_dc = branch_currents(sys.grid, du_ac, du_dc)
    return SensitivityResult(x, u, b, du_ac, du_dc, dmag, dang, di_ac, di_dc, residual)


def all_sensitivities(
    grid: GridModel,
    op: OperatingPoint,
    controls=None,
    *,
    parallel: bool = False,
    system: ScSystem | None = None,
) -> list[SensitivityResult]:
    """One :class:`SensitivityResult` per control (default: every control of the grid).

    ``A`` is factorised once. With ``parallel=True`` the solves run on a thread
    pool; each solve is independent, so the results equal the sequential ones.
    """
    sys = system or assemble_A(grid, op)
    xs = list(grid.controls() if controls is None else controls)
    for x in xs:
        if not isinstance(x, ControlVariable):
            raise ContractError(f"not a control variable: {x!r}")
    if parallel and len(xs) > 1:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(lambda x: solve_sc(sys, x), xs))
    return [solve_sc(sys, x) for x in xs]
