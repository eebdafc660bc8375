"""Unified Newton power flow for unbalanced hybrid AC/DC grids.

Unknowns are rectangular AC phase voltages of every non-slack node and all DC
voltages (pinned ones included, each with its own ``E - E*`` equation). The
equation set per node role:

* AC PQ: per-phase P and Q; AC PV: per-phase P and ``|E|^2 - |E*|^2``.
* DC P: ``E_j (Y E)_j - P*``; DC V: ``E_j - E*``.
* Converter at (l, k), P-Q mode: positive-sequence P and Q at l equal the
  setpoints, DC node k injects ``-P*`` (lossless converter).
* Converter, Vdc-Q mode: ``P_dc,k + P+_l = 0`` (lossless balance), positive
  sequence Q at l, ``E_k = E*``.
* Every converter: zero-sequence voltage at l vanishes, and either the
  negative-sequence voltage vanishes (default) or the negative-sequence P/Q
  follow their setpoints.

Sequence powers are three-phase totals ``3 E_s conj(I_s)``.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from .errors import InvalidGrid, NonConvergence, SingularJacobian
from .grid import GridModel, NodeRole, validate_grid
from .identities import StateView, UnknownIndex, linearize
from .sequence import NEGATIVE, POSITIVE, ZERO

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
RCOND_MIN = 1e-14


@dataclass(frozen=True)
class OperatingPoint:
    """Converged state of the grid.

    ``s_ac`` are the realised per-phase complex injections and ``p_dc`` the DC
    injections, both evaluated from the final voltages.
    """

    e_ac: np.ndarray
    e_dc: np.ndarray
    s_ac: np.ndarray
    p_dc: np.ndarray
    iterations: int
    residual_norm: float

    def __post_init__(self):
        for name in ("e_ac", "e_dc", "s_ac", "p_dc"):
            a = np.array(getattr(self, name))
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_state(cls, grid: GridModel, e_ac, e_dc, iterations=0, residual_norm=float("nan")):
        view = StateView(grid, e_ac, e_dc)
        return cls(view.e_ac, view.e_dc, view.s_ac, view.p_dc, iterations, residual_norm)

    def to_dict(self, grid: GridModel | None = None) -> dict:
        ac_names = [n.name for n in grid.ac_nodes] if grid else list(range(len(self.e_ac)))
        dc_names = [n.name for n in grid.dc_nodes] if grid else list(range(len(self.e_dc)))
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "ac": [
                {
                    "node": name,
                    "re": [float(v.real) for v in e],
                    "im": [float(v.imag) for v in e],
                    "magnitude": [float(abs(v)) for v in e],
                    "angle_deg": [float(np.degrees(np.angle(v))) for v in e],
                    "p": [float(v.real) for v in s],
                    "q": [float(v.imag) for v in s],
                }
                for name, e, s in zip(ac_names, self.e_ac, self.s_ac)
            ],
            "dc": [
                {"node": name, "voltage": float(e), "p": float(p)}
                for name, e, p in zip(dc_names, self.e_dc, self.p_dc)
            ],
        }

    @classmethod
    def from_dict(cls, grid: GridModel, data: dict) -> OperatingPoint:
        e_ac = np.ones((grid.n_ac, 3), dtype=complex)
        by_name = {row["node"]: row for row in data.get("ac", [])}
        for i, node in enumerate(grid.ac_nodes):
            row = by_name[node.name]
            e_ac[i] = np.asarray(row["re"]) + 1j * np.asarray(row["im"])
        dc_by = {row["node"]: row for row in data.get("dc", [])}
        e_dc = np.array([dc_by[n.name]["voltage"] for n in grid.dc_nodes], dtype=float)
        return cls.from_state(
            grid, e_ac, e_dc, int(data.get("iterations", 0)), float(data.get("residual_norm", np.nan))
        )


def flat_start(grid: GridModel) -> tuple[np.ndarray, np.ndarray]:
    """Balanced positive-sequence unit voltages on AC, 1.0 p.u. on DC.

    Slack rows take their setpoint phasors; PV nodes and pinned DC nodes
    start at their magnitude setpoints.
    """
    sp = grid.setpoints
    base = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])
    e_ac = np.tile(base, (grid.n_ac, 1))
    for i, role in enumerate(grid.ac_role):
        if role is NodeRole.AC_SLACK:
            e_ac[i] = sp.e_slack[i]
        elif role is NodeRole.AC_PV:
            e_ac[i] = base * sp.vm_ac[i]
    e_dc = np.ones(grid.n_dc)
    for j, role in enumerate(grid.dc_role):
        if role in (NodeRole.DC_V, NodeRole.IC_VDCQ):
            e_dc[j] = sp.v_dc[j]
    return e_ac, e_dc


def residuals(grid: GridModel, e_ac, e_dc) -> np.ndarray:
    """Mismatch (computed minus setpoint) of every power-flow equation."""
    idx = UnknownIndex(grid)
    v = StateView(grid, e_ac, e_dc)
    sp = grid.setpoints
    r = np.zeros(idx.size)
    for i, role in enumerate(grid.ac_role):
        ra, rb = idx.re_block(i), idx.im_block(i)
        if role is NodeRole.AC_PQ:
            r[ra] = v.s_ac[i].real - sp.p_ac[i]
            r[rb] = v.s_ac[i].imag - sp.q_ac[i]
        elif role is NodeRole.AC_PV:
            r[ra] = v.s_ac[i].real - sp.p_ac[i]
            r[rb] = np.abs(v.e_ac[i]) ** 2 - sp.vm_ac[i] ** 2
    for j, role in enumerate(grid.dc_role):
        rj = idx.dc(j)
        if role is NodeRole.DC_P:
            r[rj] = v.p_dc[j] - sp.p_dc[j]
        elif role in (NodeRole.DC_V, NodeRole.IC_VDCQ):
            r[rj] = v.e_dc[j] - sp.v_dc[j]
    for c, conv in enumerate(grid.converters):
        ic = idx.ic_rows(conv.ac_node)
        s_seq = v.seq_power(conv.ac_node)
        e_seq = v.seq_voltage(conv.ac_node)
        if conv.mode is NodeRole.IC_VDCQ:
            r[ic["p"]] = v.p_dc[conv.dc_node] + s_seq[POSITIVE].real
        else:
            r[ic["p"]] = s_seq[POSITIVE].real - sp.p_ic[c]
            r[idx.dc(conv.dc_node)] = v.p_dc[conv.dc_node] + sp.p_ic[c]
        r[ic["q"]] = s_seq[POSITIVE].imag - sp.q_ic[c]
        r[ic["zero_re"]], r[ic["zero_im"]] = e_seq[ZERO].real, e_seq[ZERO].imag
        if conv.allow_negative_sequence:
            r[ic["neg_re"]] = s_seq[NEGATIVE].real - sp.p_neg_ic[c]
            r[ic["neg_im"]] = s_seq[NEGATIVE].imag - sp.q_neg_ic[c]
        else:
            r[ic["neg_re"]], r[ic["neg_im"]] = e_seq[NEGATIVE].real, e_seq[NEGATIVE].imag
    return r


def jacobian(grid: GridModel, e_ac, e_dc) -> np.ndarray:
    """Analytic derivative of :func:`residuals` w.r.t. the flat unknown vector."""
    m, idx = linearize(grid, e_ac, e_dc)
    for i in grid.nodes_with(NodeRole.AC_PV):
        m[idx.im_block(i)] *= 2.0
    return m


# Concurrent getrs calls on the bundled OpenBLAS return wrong solutions (seen with
# scipy 1.15 on a single core), so every LAPACK call from this package is serialised.
# The calls take microseconds; thread pools still overlap everything around them.
_LAPACK_LOCK = threading.Lock()


def rcond(matrix: np.ndarray, lu=None) -> float:
    """LAPACK 1-norm reciprocal condition estimate (0.0 for an exactly singular LU)."""
    if lu is None:
        return factorize(matrix)[1]
    with _LAPACK_LOCK:
        return _rcond(matrix, lu)


def _rcond(matrix, lu) -> float:
    if matrix.size == 0:
        return 1.0
    anorm = np.linalg.norm(matrix, 1)
    if anorm == 0 or not np.all(np.isfinite(lu[0])):
        return 0.0
    if np.any(np.diag(lu[0]) == 0):
        return 0.0
    value, info = dgecon(lu[0], anorm, norm="1")
    return float(value) if info == 0 else 0.0


def factorize(matrix: np.ndarray):
    """``(lu, piv, rcond)`` of a square matrix; warnings from exact zeros are silenced."""
    import warnings

    with _LAPACK_LOCK, warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu = lu_factor(matrix, check_finite=False)
        return lu, _rcond(matrix, lu)


def solve_factored(lu, b: np.ndarray) -> np.ndarray:
    """``lu_solve`` that is safe to call from several threads at once."""
    with _LAPACK_LOCK:
        return lu_solve(lu, b, check_finite=False)


def solve_pf(
    grid: GridModel,
    init: tuple[np.ndarray, np.ndarray] | OperatingPoint | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    line_search: bool = False,
    check: bool = True,
) -> OperatingPoint:
    """Solve the hybrid power flow by Newton's method with the full Jacobian.

    ``iterations`` counts residual evaluations, so a start that already
    satisfies every equation reports 1. Converters allowed to inject negative
    sequence are warm-started from the default-mode solution when no ``init``
    is given, because their negative-sequence power equations are singular
    at a perfectly balanced start.
    """
    if check:
        report = validate_grid(grid)
        if not report.ok:
            raise InvalidGrid(report.violations)
    if init is None and any(c.allow_negative_sequence for c in grid.converters):
        plain = dataclasses.replace(
            grid,
            converters=tuple(dataclasses.replace(c, allow_negative_sequence=False) for c in grid.converters),
        )
        init = solve_pf(plain, tol=tol, max_iter=max_iter, line_search=line_search, check=False)
    if init is None:
        e_ac, e_dc = flat_start(grid)
    elif isinstance(init, OperatingPoint):
        e_ac, e_dc = np.array(init.e_ac), np.array(init.e_dc)
    else:
        e_ac, e_dc = np.array(init[0], dtype=complex), np.array(init[1], dtype=float)
    e_ac = e_ac.reshape(grid.n_ac, 3)
    for i in grid.nodes_with(NodeRole.AC_SLACK):
        e_ac[i] = grid.setpoints.e_slack[i]

    idx = UnknownIndex(grid)
    x = idx.pack(e_ac, e_dc)
    norm = np.inf
    for it in range(1, max_iter + 1):
        r = residuals(grid, e_ac, e_dc)
        norm = float(np.max(np.abs(r))) if r.size else 0.0
        log.debug("iteration %d: |r|inf = %.3e", it, norm)
        if norm <= tol:
            return OperatingPoint.from_state(grid, e_ac, e_dc, it, norm)
        if not np.isfinite(norm):
            break
        j = jacobian(grid, e_ac, e_dc)
        lu, rc = factorize(j)
        if rc < RCOND_MIN:
            raise SingularJacobian(it, rc)
        step = solve_factored(lu, -r)
        t = 1.0
        if line_search:
            while t > 1e-3:
                e_try = idx.unpack(x + t * step, e_ac)
                if np.max(np.abs(residuals(grid, *e_try))) < norm:
                    break
                t *= 0.5
        x = x + t * step
        e_ac, e_dc = idx.unpack(x, e_ac)
    raise NonConvergence(max_iter, norm)
