"""State-dependent F/H identities and the real-valued linearisation built on them.

The power injected at a compound AC index ``a`` (node, phase) is
``S_a = E_a * conj(sum_b Y_ab E_b)``. Its variation is

    dS_a = H_a dE_a + sum_b F_ab conj(dE_b),
    F_ab = E_a conj(Y_ab),   H_a = conj(sum_b Y_ab E_b),

i.e. a complex-linear part in ``dE`` and an antilinear part in ``conj(dE)``.
Splitting into real/imaginary parts gives rows over the unknowns
``[dE' | dE'' | dE_dc]``. The DC grid uses the real analogue
``F_jm = E_j Y_jm`` and ``H_j = sum_m Y_jm E_m``; converters use the
sequence-domain identities of :mod:`hybridsc.sequence`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import GridModel, NodeRole
from .sequence import NEGATIVE, POSITIVE, ZERO, T, sequence_fh_blocks


class UnknownIndex:
    """Position of every real unknown (and of its equation) in the flat system.

    Columns are ``[real parts | imaginary parts | DC voltages]``; inside each AC
    block, non-slack nodes are node-major and phase-minor. Converter AC nodes sit
    in the AC blocks like any other member of the AC node set. Every AC node owns
    two row groups aligned with its two column groups ("first" and "second"
    equation per phase); a converter's six rows are laid out over the same slots
    as documented in :meth:`ic_rows`.
    """

    def __init__(self, grid: GridModel):
        self.n_ac = grid.n_ac
        self.n_dc = grid.n_dc
        self.free = [i for i, r in enumerate(grid.ac_role) if r is not NodeRole.AC_SLACK]
        self.pos = np.full(grid.n_ac, -1, dtype=int)
        self.pos[self.free] = np.arange(len(self.free))
        self.nf = len(self.free)
        self.size = 6 * self.nf + self.n_dc
        self.comp_free = np.array([3 * i + p for i in self.free for p in range(3)], dtype=int)

    def re(self, i: int, phase: int) -> int:
        return 3 * self.pos[i] + phase

    def im(self, i: int, phase: int) -> int:
        return 3 * self.nf + 3 * self.pos[i] + phase

    def dc(self, j: int) -> int:
        return 6 * self.nf + j

    def re_block(self, i: int) -> np.ndarray:
        return 3 * self.pos[i] + np.arange(3)

    def im_block(self, i: int) -> np.ndarray:
        return 3 * self.nf + 3 * self.pos[i] + np.arange(3)

    def ic_rows(self, l: int) -> dict[str, int]:
        """Rows of the six converter equations at AC node ``l``."""
        a, b = self.re_block(l), self.im_block(l)
        return {
            "p": a[0],
            "q": a[1],
            "zero_re": a[2],
            "zero_im": b[0],
            "neg_re": b[1],
            "neg_im": b[2],
        }

    def pack(self, e_ac: np.ndarray, e_dc: np.ndarray) -> np.ndarray:
        flat = np.asarray(e_ac, dtype=complex).reshape(-1)[self.comp_free]
        return np.concatenate([flat.real, flat.imag, np.asarray(e_dc, dtype=float)])

    def unpack(self, x: np.ndarray, e_fixed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rebuild ``(e_ac, e_dc)``; slack rows are copied from ``e_fixed``."""
        e_ac = np.array(e_fixed, dtype=complex).reshape(-1)
        k = 3 * self.nf
        e_ac[self.comp_free] = x[:k] + 1j * x[k : 2 * k]
        return e_ac.reshape(self.n_ac, 3), np.array(x[2 * k :], dtype=float)


@dataclass(frozen=True)
class FhIdentities:
    f_ac: np.ndarray  # (3N, 3N) complex
    h_ac: np.ndarray  # (3N,) complex
    f_dc: np.ndarray  # (M, M)
    h_dc: np.ndarray  # (M,)
    f_seq: dict  # converter -> (N, 3, 3) complex
    h_seq: dict  # converter -> (3, 3) complex


def fh_from_state(grid: GridModel, e_ac, e_dc) -> FhIdentities:
    e = np.asarray(e_ac, dtype=complex).reshape(-1)
    ed = np.asarray(e_dc, dtype=float)
    y = grid.y_ac
    f_ac = e[:, None] * np.conj(y)
    h_ac = np.conj(y @ e)
    f_dc = ed[:, None] * grid.y_dc
    h_dc = grid.y_dc @ ed
    f_seq, h_seq = {}, {}
    e3 = e.reshape(grid.n_ac, 3)
    for k, conv in enumerate(grid.converters):
        f_seq[k], h_seq[k] = sequence_fh_blocks(y, e3, conv.ac_node)
    return FhIdentities(f_ac, h_ac, f_dc, h_dc, f_seq, h_seq)


def compute_fh(grid: GridModel, op) -> FhIdentities:
    """F/H identities at the operating point ``op`` (anything with ``e_ac``/``e_dc``)."""
    return fh_from_state(grid, op.e_ac, op.e_dc)


class _Rows:
    """Helper turning complex (linear, antilinear) coefficients into real rows."""

    def __init__(self, idx: UnknownIndex):
        self.idx = idx
        self.k = 3 * idx.nf

    def power(self, lin: np.ndarray, anti: np.ndarray):
        """Rows of ``Re`` and ``Im`` of ``lin . dE + anti . conj(dE)`` (compound vectors)."""
        f = self.idx.comp_free
        lin, anti = lin[..., f], anti[..., f]
        re_row = np.concatenate([lin.real + anti.real, -lin.imag + anti.imag], axis=-1)
        im_row = np.concatenate([lin.imag + anti.imag, lin.real - anti.real], axis=-1)
        return re_row, im_row


def _seq_power_rows(rows, n_ac, l, f_seq, h_seq, s):
    """Re/Im rows of the sequence-``s`` power 3 E_s conj(I_s) at converter node ``l``."""
    lin = np.zeros(3 * n_ac, dtype=complex)
    lin[3 * l : 3 * l + 3] = 3.0 * h_seq[s, s] * T[s]
    anti = (3.0 * f_seq[:, s, :] @ np.conj(T)).reshape(-1)
    return rows.power(lin, anti)


def _seq_voltage_rows(rows, n_ac, l, s):
    lin = np.zeros(3 * n_ac, dtype=complex)
    lin[3 * l : 3 * l + 3] = T[s]
    return rows.power(lin, np.zeros_like(lin))


def linearize(grid: GridModel, e_ac, e_dc, fh: FhIdentities | None = None, *, balanced: bool = False):
    """Linearised power-flow equations at a state.

    Returns ``(M, idx)`` where ``M`` is square over :class:`UnknownIndex`. PV
    magnitude rows carry ``(E', E'')`` (the derivative of ``|E|^2 / 2``);
    DC-V and converter DC-voltage rows are identity rows; all coupling columns
    are kept. With ``balanced=True`` converter AC nodes use per-phase power
    rows instead of the sequence formulation.
    """
    idx = UnknownIndex(grid)
    fh = fh or fh_from_state(grid, e_ac, e_dc)
    rows = _Rows(idx)
    k3 = 3 * idx.nf
    dc0 = 2 * k3
    m = np.zeros((idx.size, idx.size))
    e = np.asarray(e_ac, dtype=complex).reshape(-1)

    diag_h = np.diag(fh.h_ac)
    p_re, q_re = rows.power(diag_h, fh.f_ac)

    for i, role in enumerate(grid.ac_role):
        if role is NodeRole.AC_SLACK:
            continue
        comp = np.arange(3 * i, 3 * i + 3)
        ra, rb = idx.re_block(i), idx.im_block(i)
        if role in (NodeRole.AC_PQ, NodeRole.AC_PV) or (balanced and role.is_ic):
            m[ra, :dc0] = p_re[comp]
            if role is NodeRole.AC_PV:
                m[rb, idx.re_block(i)] = e[comp].real
                m[rb, idx.im_block(i)] = e[comp].imag
            else:
                m[rb, :dc0] = q_re[comp]

    dc_rows = fh.f_dc + np.diag(fh.h_dc)
    for j, role in enumerate(grid.dc_role):
        r = idx.dc(j)
        if role in (NodeRole.DC_P, NodeRole.IC_PQ):
            m[r, dc0:] = dc_rows[j]
        else:
            m[r, r] = 1.0

    for c, conv in enumerate(grid.converters):
        l, kdc = conv.ac_node, conv.dc_node
        vdc = conv.mode is NodeRole.IC_VDCQ
        if balanced:
            if vdc:
                m[idx.re_block(l), dc0:] += dc_rows[kdc] / 3.0
            continue
        ic = idx.ic_rows(l)
        f_seq, h_seq = fh.f_seq[c], fh.h_seq[c]

        p_row, q_row = _seq_power_rows(rows, grid.n_ac, l, f_seq, h_seq, POSITIVE)
        m[ic["p"], :dc0] = p_row
        m[ic["q"], :dc0] = q_row
        if vdc:
            m[ic["p"], dc0:] += dc_rows[kdc]
        m[ic["zero_re"], :dc0], m[ic["zero_im"], :dc0] = _seq_voltage_rows(rows, grid.n_ac, l, ZERO)
        if conv.allow_negative_sequence:
            m[ic["neg_re"], :dc0], m[ic["neg_im"], :dc0] = _seq_power_rows(rows, grid.n_ac, l, f_seq, h_seq, NEGATIVE)
        else:
            m[ic["neg_re"], :dc0], m[ic["neg_im"], :dc0] = _seq_voltage_rows(rows, grid.n_ac, l, NEGATIVE)
    return m, idx


class StateView:
    """Lazily evaluated quantities of one candidate state (used by the residuals)."""

    def __init__(self, grid: GridModel, e_ac, e_dc):
        self.grid = grid
        self.e_ac = np.asarray(e_ac, dtype=complex).reshape(grid.n_ac, 3)
        self.e_dc = np.asarray(e_dc, dtype=float).reshape(grid.n_dc)

    @cached_property
    def i_ac(self) -> np.ndarray:
        return (self.grid.y_ac @ self.e_ac.reshape(-1)).reshape(self.grid.n_ac, 3)

    @cached_property
    def s_ac(self) -> np.ndarray:
        return self.e_ac * np.conj(self.i_ac)

    @cached_property
    def p_dc(self) -> np.ndarray:
        return self.e_dc * (self.grid.y_dc @ self.e_dc)

    def seq_power(self, l: int) -> np.ndarray:
        """Three-phase sequence powers ``3 E_s conj(I_s)`` at AC node ``l``."""
        e_s = T @ self.e_ac[l]
        i_s = T @ self.i_ac[l]
        return 3.0 * e_s * np.conj(i_s)

    def seq_voltage(self, l: int) -> np.ndarray:
        return T @ self.e_ac[l]
