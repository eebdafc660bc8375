"""Network data model for unbalanced hybrid AC/DC grids.

Everything stored here is in per-unit on a single base power. AC voltages are
phase-to-ground, on the phase base ``ac_voltage / sqrt(3)``; DC voltages are on
``dc_voltage``. AC powers are per phase, so the total three-phase power of a
node is the sum over its phases.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .controls import ControlKind, ControlVariable
from .errors import ContractError, StructuralError
from .sequence import T, T_INV


class NodeRole(str, Enum):
    AC_SLACK = "slack"
    AC_PQ = "pq"
    AC_PV = "pv"
    DC_P = "p"
    DC_V = "v"
    IC_PQ = "ic_pq"
    IC_VDCQ = "ic_vdcq"

    @property
    def is_ic(self) -> bool:
        return self in (NodeRole.IC_PQ, NodeRole.IC_VDCQ)


AC_ROLES = frozenset({NodeRole.AC_SLACK, NodeRole.AC_PQ, NodeRole.AC_PV, NodeRole.IC_PQ, NodeRole.IC_VDCQ})
DC_ROLES = frozenset({NodeRole.DC_P, NodeRole.DC_V, NodeRole.IC_PQ, NodeRole.IC_VDCQ})


@dataclass(frozen=True)
class Bases:
    power: float = 100e3
    ac_voltage: float = 400.0
    dc_voltage: float = 800.0

    @property
    def ac_phase_voltage(self) -> float:
        return self.ac_voltage / np.sqrt(3.0)

    @property
    def ac_impedance(self) -> float:
        return self.ac_phase_voltage**2 / self.power

    @property
    def dc_impedance(self) -> float:
        return self.dc_voltage**2 / self.power


@dataclass(frozen=True)
class AcNode:
    name: str
    role: NodeRole


@dataclass(frozen=True)
class DcNode:
    name: str
    role: NodeRole


def _matrix3(value) -> np.ndarray:
    m = np.asarray(value, dtype=complex)
    if m.ndim == 0:
        m = m * np.eye(3)
    if m.shape != (3, 3):
        raise StructuralError(f"branch admittance must be 3x3, got shape {m.shape}")
    m = m.copy()
    m.flags.writeable = False
    return m


def _is_circulant(m: np.ndarray, tol: float = 1e-9) -> bool:
    scale = max(1.0, float(np.abs(m).max()))
    return all(np.allclose(m[r], np.roll(m[0], r), atol=tol * scale) for r in range(3))


@dataclass(frozen=True)
class AcBranch:
    """Three-phase pi-model branch between AC nodes ``from_node`` and ``to_node``."""

    from_node: int
    to_node: int
    series: np.ndarray
    shunt_from: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), complex))
    shunt_to: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), complex))
    name: str = ""

    def __post_init__(self):
        for attr in ("series", "shunt_from", "shunt_to"):
            object.__setattr__(self, attr, _matrix3(getattr(self, attr)))

    @classmethod
    def from_sequence(cls, from_node, to_node, z1, z0=None, y1=0.0, y0=None, name=""):
        """Transposed line from positive/zero-sequence series impedance and total shunt admittance."""
        z0 = z1 if z0 is None else z0
        y0 = y1 if y0 is None else y0
        z_abc = T_INV @ np.diag([z0, z1, z1]) @ T
        y_sh = T_INV @ np.diag([y0, y1, y1]) @ T
        return cls(from_node, to_node, np.linalg.inv(z_abc), y_sh / 2, y_sh / 2, name)

    @property
    def is_circulant(self) -> bool:
        return all(_is_circulant(m) for m in (self.series, self.shunt_from, self.shunt_to))


@dataclass(frozen=True)
class DcBranch:
    from_node: int
    to_node: int
    conductance: float
    name: str = ""


@dataclass(frozen=True)
class Converter:
    """AC/DC interfacing converter coupling AC node ``ac_node`` with DC node ``dc_node``."""

    name: str
    ac_node: int
    dc_node: int
    mode: NodeRole
    allow_negative_sequence: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", NodeRole(self.mode))


def _frozen(a, dtype, shape) -> np.ndarray:
    a = np.array(a, dtype=dtype).reshape(shape)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Setpoints:
    """Controllable values, all per-unit.

    ``p_ac``/``q_ac`` are per-phase injections (generator convention) and
    ``vm_ac`` the PV magnitudes. ``e_slack`` holds the slack phasors (rows of
    non-slack nodes are ignored). ``v_dc`` carries the DC-V node voltages and
    the DC voltage of Vdc-Q converters. ``p_ic`` is the active power a converter
    injects into the AC grid; ``q_ic`` its positive-sequence reactive power.
    """

    p_ac: np.ndarray
    q_ac: np.ndarray
    vm_ac: np.ndarray
    e_slack: np.ndarray
    p_dc: np.ndarray
    v_dc: np.ndarray
    p_ic: np.ndarray
    q_ic: np.ndarray
    p_neg_ic: np.ndarray
    q_neg_ic: np.ndarray

    @classmethod
    def zeros(cls, n_ac: int, n_dc: int, n_ic: int) -> Setpoints:
        return cls(
            p_ac=np.zeros((n_ac, 3)),
            q_ac=np.zeros((n_ac, 3)),
            vm_ac=np.ones((n_ac, 3)),
            e_slack=np.tile(np.array([1.0, T_INV[1, 1], T_INV[1, 2]]), (n_ac, 1)),
            p_dc=np.zeros(n_dc),
            v_dc=np.ones(n_dc),
            p_ic=np.zeros(n_ic),
            q_ic=np.zeros(n_ic),
            p_neg_ic=np.zeros(n_ic),
            q_neg_ic=np.zeros(n_ic),
        )

    def __post_init__(self):
        n_ac = np.shape(self.p_ac)[0] if np.ndim(self.p_ac) else 0
        n_dc = np.size(self.p_dc)
        n_ic = np.size(self.p_ic)
        for name, dtype, shape in (
            ("p_ac", float, (n_ac, 3)),
            ("q_ac", float, (n_ac, 3)),
            ("vm_ac", float, (n_ac, 3)),
            ("e_slack", complex, (n_ac, 3)),
            ("p_dc", float, (n_dc,)),
            ("v_dc", float, (n_dc,)),
            ("p_ic", float, (n_ic,)),
            ("q_ic", float, (n_ic,)),
            ("p_neg_ic", float, (n_ic,)),
            ("q_neg_ic", float, (n_ic,)),
        ):
            try:
                object.__setattr__(self, name, _frozen(getattr(self, name), dtype, shape))
            except ValueError as exc:
                raise StructuralError(f"setpoint {name} has wrong shape: {exc}") from None

    def replace(self, **changes) -> Setpoints:
        return dataclasses.replace(self, **changes)


def build_ac_admittance(branches, n_nodes: int) -> np.ndarray:
    """Compound (3n x 3n) nodal admittance matrix of pi-model branches."""
    y = np.zeros((3 * n_nodes, 3 * n_nodes), dtype=complex)
    for br in branches:
        i, n = br.from_node, br.to_node
        if not (0 <= i < n_nodes and 0 <= n < n_nodes):
            raise StructuralError(f"AC branch {br.name or (i, n)} references a node outside 0..{n_nodes - 1}")
        si, sn = slice(3 * i, 3 * i + 3), slice(3 * n, 3 * n + 3)
        y[si, si] += br.series + br.shunt_from
        y[sn, sn] += br.series + br.shunt_to
        y[si, sn] -= br.series
        y[sn, si] -= br.series
    return y


def build_dc_admittance(branches, m_nodes: int) -> np.ndarray:
    y = np.zeros((m_nodes, m_nodes))
    for br in branches:
        j, m = br.from_node, br.to_node
        if not (0 <= j < m_nodes and 0 <= m < m_nodes):
            raise StructuralError(f"DC branch {br.name or (j, m)} references a node outside 0..{m_nodes - 1}")
        g = br.conductance
        y[j, j] += g
        y[m, m] += g
        y[j, m] -= g
        y[m, j] -= g
    return y


@dataclass(frozen=True)
class GridModel:
    """Immutable description of a hybrid AC/DC network.

    Admittance matrices are built lazily and cached; the branch lists are kept
    as well because branch currents need the per-branch series and shunt
    elements.
    """

    ac_nodes: tuple[AcNode, ...]
    dc_nodes: tuple[DcNode, ...]
    ac_branches: tuple[AcBranch, ...]
    dc_branches: tuple[DcBranch, ...]
    converters: tuple[Converter, ...]
    setpoints: Setpoints
    bases: Bases = Bases()
    name: str = "grid"

    def __post_init__(self):
        for attr in ("ac_nodes", "dc_nodes", "ac_branches", "dc_branches", "converters"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def n_ac(self) -> int:
        return len(self.ac_nodes)

    @property
    def n_dc(self) -> int:
        return len(self.dc_nodes)

    @cached_property
    def y_ac(self) -> np.ndarray:
        y = build_ac_admittance(self.ac_branches, self.n_ac)
        y.flags.writeable = False
        return y

    @cached_property
    def y_dc(self) -> np.ndarray:
        y = build_dc_admittance(self.dc_branches, self.n_dc)
        y.flags.writeable = False
        return y

    @cached_property
    def ac_role(self) -> tuple[NodeRole, ...]:
        return tuple(n.role for n in self.ac_nodes)

    @cached_property
    def dc_role(self) -> tuple[NodeRole, ...]:
        return tuple(n.role for n in self.dc_nodes)

    @cached_property
    def converter_at_ac(self) -> dict[int, int]:
        return {c.ac_node: k for k, c in enumerate(self.converters)}

    @cached_property
    def converter_at_dc(self) -> dict[int, int]:
        return {c.dc_node: k for k, c in enumerate(self.converters)}

    def ac_index(self, name: str) -> int:
        for i, n in enumerate(self.ac_nodes):
            if n.name == name:
                return i
        raise KeyError(name)

    def dc_index(self, name: str) -> int:
        for j, n in enumerate(self.dc_nodes):
            if n.name == name:
                return j
        raise KeyError(name)

    def converter_index(self, name: str) -> int:
        for k, c in enumerate(self.converters):
            if c.name == name:
                return k
        raise KeyError(name)

    def nodes_with(self, *roles: NodeRole) -> list[int]:
        return [i for i, r in enumerate(self.ac_role) if r in roles]

    # -- control variables ---------------------------------------------------

    def controls(self) -> list[ControlVariable]:
        """Every independent setpoint of the grid, in a fixed order."""
        xs: list[ControlVariable] = []
        for i, role in enumerate(self.ac_role):
            if role is NodeRole.AC_PQ:
                xs += [ControlVariable.ac_p(i, p) for p in range(3)]
                xs += [ControlVariable.ac_q(i, p) for p in range(3)]
            elif role is NodeRole.AC_PV:
                xs += [ControlVariable.ac_p(i, p) for p in range(3)]
                xs += [ControlVariable.ac_vmag(i, p) for p in range(3)]
        for j, role in enumerate(self.dc_role):
            if role is NodeRole.DC_P:
                xs.append(ControlVariable.dc_p(j))
            elif role is NodeRole.DC_V:
                xs.append(ControlVariable.dc_v(j))
        for k, conv in enumerate(self.converters):
            if conv.mode is NodeRole.IC_PQ:
                xs.append(ControlVariable.ic_p(k))
            else:
                xs.append(ControlVariable.ic_vdc(k))
            xs.append(ControlVariable.ic_q(k))
        return xs

    def check_control(self, x: ControlVariable) -> None:
        """Raise :class:`ContractError` unless ``x`` matches the role of its node."""
        kind = x.kind
        if kind in (ControlKind.AC_P, ControlKind.AC_Q, ControlKind.AC_VMAG):
            if not 0 <= x.index < self.n_ac:
                raise ContractError(f"{x}: AC node out of range")
            role = self.ac_role[x.index]
            allowed = {
                ControlKind.AC_P: (NodeRole.AC_PQ, NodeRole.AC_PV),
                ControlKind.AC_Q: (NodeRole.AC_PQ,),
                ControlKind.AC_VMAG: (NodeRole.AC_PV,),
            }[kind]
        elif kind in (ControlKind.DC_P, ControlKind.DC_V):
            if not 0 <= x.index < self.n_dc:
                raise ContractError(f"{x}: DC node out of range")
            role = self.dc_role[x.index]
            allowed = (NodeRole.DC_P,) if kind is ControlKind.DC_P else (NodeRole.DC_V,)
        else:
            if not 0 <= x.index < len(self.converters):
                raise ContractError(f"{x}: converter out of range")
            role = self.converters[x.index].mode
            allowed = {
                ControlKind.IC_P: (NodeRole.IC_PQ,),
                ControlKind.IC_Q: (NodeRole.IC_PQ, NodeRole.IC_VDCQ),
                ControlKind.IC_VDC: (NodeRole.IC_VDCQ,),
            }[kind]
        if role not in allowed:
            raise ContractError(f"control {x.kind.value} does not apply to a node of role {role.value}")

    def _setpoint_slot(self, x: ControlVariable):
        self.check_control(x)
        k = x.kind
        if k is ControlKind.AC_P:
            return "p_ac", (x.index, x.phase)
        if k is ControlKind.AC_Q:
            return "q_ac", (x.index, x.phase)
        if k is ControlKind.AC_VMAG:
            return "vm_ac", (x.index, x.phase)
        if k is ControlKind.DC_P:
            return "p_dc", (x.index,)
        if k is ControlKind.DC_V:
            return "v_dc", (x.index,)
        if k is ControlKind.IC_P:
            return "p_ic", (x.index,)
        if k is ControlKind.IC_Q:
            return "q_ic", (x.index,)
        return "v_dc", (self.converters[x.index].dc_node,)

    def setpoint(self, x: ControlVariable) -> float:
        name, idx = self._setpoint_slot(x)
        return float(getattr(self.setpoints, name)[idx])

    def with_setpoint(self, x: ControlVariable, value: float) -> GridModel:
        """Copy of the grid with the setpoint of ``x`` replaced by ``value``."""
        name, idx = self._setpoint_slot(x)
        arr = np.array(getattr(self.setpoints, name))
        arr[idx] = value
        return dataclasses.replace(self, setpoints=self.setpoints.replace(**{name: arr}))

    def with_setpoints(self, **changes) -> GridModel:
        return dataclasses.replace(self, setpoints=self.setpoints.replace(**changes))


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass
class GridReport:
    violations: list[Violation]
    circulant: list[bool]
    ac_islands: int
    dc_islands: int

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def _islands(n: int, edges) -> tuple[int, np.ndarray]:
    if n == 0:
        return 0, np.zeros(0, dtype=int)
    edges = [(a, b) for a, b in edges if 0 <= a < n and 0 <= b < n]
    rows = [a for a, _ in edges]
    cols = [b for _, b in edges]
    g = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    return connected_components(g, directed=False)


def validate_grid(grid: GridModel) -> GridReport:
    """Check role, coupling and topology rules; never stops at the first problem."""
    out: list[Violation] = []

    def bad(code, message):
        out.append(Violation(code, message))

    n, m = grid.n_ac, grid.n_dc

    for node in grid.ac_nodes:
        if node.role not in AC_ROLES:
            bad("invalid role", f"AC node {node.name} has DC-only role {node.role.value}")
    for node in grid.dc_nodes:
        if node.role not in DC_ROLES:
            bad("invalid role", f"DC node {node.name} has AC-only role {node.role.value}")

    circulant = []
    for b, br in enumerate(grid.ac_branches):
        label = br.name or f"#{b}"
        if not (0 <= br.from_node < n and 0 <= br.to_node < n):
            bad("branch out of range", f"AC branch {label} references a missing node")
        elif br.from_node == br.to_node:
            bad("self loop", f"AC branch {label} connects a node to itself")
        if not np.allclose(br.series, br.series.T, atol=1e-12 * max(1.0, np.abs(br.series).max())):
            bad("asymmetric branch", f"AC branch {label} has a non-symmetric series admittance")
        circulant.append(br.is_circulant)
    for b, br in enumerate(grid.dc_branches):
        label = br.name or f"#{b}"
        if not (0 <= br.from_node < m and 0 <= br.to_node < m):
            bad("branch out of range", f"DC branch {label} references a missing node")
        elif br.from_node == br.to_node:
            bad("self loop", f"DC branch {label} connects a node to itself")
        if not br.conductance > 0:
            bad("nonpositive conductance", f"DC branch {label} has conductance {br.conductance}")

    n_ac_isl, ac_lab = _islands(n, [(b.from_node, b.to_node) for b in grid.ac_branches])
    n_dc_isl, dc_lab = _islands(m, [(b.from_node, b.to_node) for b in grid.dc_branches])
    if n_ac_isl > 1:
        bad("multiple AC islands", f"AC network splits into {n_ac_isl} islands")
    if n_dc_isl > 1:
        bad("multiple DC islands", f"DC network splits into {n_dc_isl} islands")

    for isl in range(n_ac_isl):
        members = np.flatnonzero(ac_lab == isl)
        slacks = [grid.ac_nodes[i].name for i in members if grid.ac_role[i] is NodeRole.AC_SLACK]
        if len(slacks) > 1:
            bad("multiple slack", f"AC island has {len(slacks)} slack nodes: {', '.join(slacks)}")
        elif not slacks:
            bad("no slack", "AC island has no slack node")
    for isl in range(n_dc_isl):
        members = np.flatnonzero(dc_lab == isl)
        if not any(grid.dc_role[j] in (NodeRole.DC_V, NodeRole.IC_VDCQ) for j in members):
            names = ", ".join(grid.dc_nodes[j].name for j in members)
            bad("unregulated DC island", f"no DC-V node or Vdc-Q converter among {names}")

    seen_ac: dict[int, str] = {}
    seen_dc: dict[int, str] = {}
    for conv in grid.converters:
        if conv.mode not in (NodeRole.IC_PQ, NodeRole.IC_VDCQ):
            bad("invalid converter mode", f"converter {conv.name} has mode {conv.mode.value}")
            continue
        if not 0 <= conv.ac_node < n or not 0 <= conv.dc_node < m:
            bad("converter out of range", f"converter {conv.name} references a missing node")
            continue
        for idx, seen, side in ((conv.ac_node, seen_ac, "AC"), (conv.dc_node, seen_dc, "DC")):
            if idx in seen:
                bad("shared converter node", f"{side} node of {conv.name} already belongs to {seen[idx]}")
            seen[idx] = conv.name
        if grid.ac_role[conv.ac_node] is not conv.mode:
            bad("converter role mismatch", f"AC node of {conv.name} has role {grid.ac_role[conv.ac_node].value}")
        if grid.dc_role[conv.dc_node] is not conv.mode:
            bad("converter role mismatch", f"DC node of {conv.name} has role {grid.dc_role[conv.dc_node].value}")
    for i, role in enumerate(grid.ac_role):
        if role.is_ic and i not in seen_ac:
            bad("orphan converter node", f"AC node {grid.ac_nodes[i].name} has a converter role but no converter")
    for j, role in enumerate(grid.dc_role):
        if role.is_ic and j not in seen_dc:
            bad("orphan converter node", f"DC node {grid.dc_nodes[j].name} has a converter role but no converter")

    sp = grid.setpoints
    if sp.p_ac.shape[0] != n or sp.p_dc.shape[0] != m or sp.p_ic.shape[0] != len(grid.converters):
        bad("setpoint shape", "setpoint arrays do not match the node/converter counts")
    else:
        for i in grid.nodes_with(NodeRole.AC_PV):
            if np.any(sp.vm_ac[i] <= 0):
                bad("nonpositive voltage setpoint", f"PV node {grid.ac_nodes[i].name}")
        for i in grid.nodes_with(NodeRole.AC_SLACK):
            if np.any(np.abs(sp.e_slack[i]) == 0):
                bad("nonpositive voltage setpoint", f"slack node {grid.ac_nodes[i].name}")
        for j, role in enumerate(grid.dc_role):
            if role in (NodeRole.DC_V, NodeRole.IC_VDCQ) and sp.v_dc[j] <= 0:
                bad("nonpositive voltage setpoint", f"DC node {grid.dc_nodes[j].name}")

    return GridReport(out, circulant, n_ac_isl, n_dc_isl)
