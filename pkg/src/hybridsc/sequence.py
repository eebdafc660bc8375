"""Symmetrical components (Fortescue) and their sequence-domain power identities.

Rows of every sequence-domain array are ordered (zero, positive, negative).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ALPHA = np.exp(2j * np.pi / 3)

ZERO, POSITIVE, NEGATIVE = 0, 1, 2


@dataclass(frozen=True)
class FortescueMatrix:
    T: np.ndarray
    T_inverse: np.ndarray


def _fortescue() -> FortescueMatrix:
    a, a2 = ALPHA, ALPHA**2
    t = np.array([[1, 1, 1], [1, a, a2], [1, a2, a]], dtype=complex) / 3.0
    t_inv = np.array([[1, 1, 1], [1, a2, a], [1, a, a2]], dtype=complex)
    t.flags.writeable = False
    t_inv.flags.writeable = False
    return FortescueMatrix(t, t_inv)


FORTESCUE = _fortescue()
T = FORTESCUE.T
T_INV = FORTESCUE.T_inverse


class SequenceTriple(NamedTuple):
    zero: complex
    positive: complex
    negative: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.zero, self.positive, self.negative], dtype=complex)


def to_sequence(e_abc) -> SequenceTriple:
    """Decompose three phase phasors into (zero, positive, negative) components."""
    s = T @ np.asarray(e_abc, dtype=complex).reshape(3)
    return SequenceTriple(complex(s[0]), complex(s[1]), complex(s[2]))


def from_sequence(s) -> np.ndarray:
    """Recompose phase phasors (a, b, c) from a :class:`SequenceTriple`."""
    return T_INV @ np.asarray(tuple(s), dtype=complex).reshape(3)


def abc_to_seq(e_abc: np.ndarray) -> np.ndarray:
    """Vectorised :func:`to_sequence` over the last axis (length 3)."""
    return np.asarray(e_abc, dtype=complex) @ T.T


def seq_to_abc(e_seq: np.ndarray) -> np.ndarray:
    return np.asarray(e_seq, dtype=complex) @ T_INV.T


def sequence_admittance(y_abc: np.ndarray) -> np.ndarray:
    """Phase-domain 3x3 admittance block expressed in sequence coordinates.

    Diagonal whenever ``y_abc`` is circulant.
    """
    return T @ np.asarray(y_abc, dtype=complex) @ T_INV


def sequence_fh_blocks(y_ac: np.ndarray, e_ac: np.ndarray, i: int):
    """F/H identities of node ``i`` in the sequence domain, for every node n.

    Returns ``(f_seq, h_seq)`` with ``f_seq`` of shape (N, 3, 3) and ``h_seq`` of
    shape (3, 3), such that the sequence power of node i (per sequence,
    ``E_s * conj(I_s)``) varies as::

        dS_seq = h_seq @ (T dE_i) + sum_n f_seq[n] @ conj(T dE_n)
    """
    n_nodes = e_ac.shape[0]
    rows = y_ac[3 * i : 3 * i + 3, :].reshape(3, n_nodes, 3).transpose(1, 0, 2)
    y_seq = T @ rows @ T_INV  # (N, 3, 3)
    e_seq = abc_to_seq(e_ac)  # (N, 3)
    i_seq = np.einsum("nab,nb->a", y_seq, e_seq)
    f_seq = e_seq[i][None, :, None] * np.conj(y_seq)
    h_seq = np.diag(np.conj(i_seq))
    return f_seq, h_seq


def sequence_fh(grid, op, i: int, n: int):
    """Sequence-domain identities ``(F_seq, H_seq)`` for the AC node pair (i, n).

    ``F_seq = diag(T E_i) conj(Y_seq[i, n])`` and
    ``H_seq = diag(conj(sum_n Y_seq[i, n] T E_n))`` where
    ``Y_seq = T Y T^-1``. Row ``s`` is the linearisation of the sequence-``s``
    power of node ``i``; mapped back to phase quantities, the antilinear part
    acts through ``conj(T)`` on the conjugated phase-voltage derivatives.
    """
    e_ac = getattr(op, "e_ac", None)
    if e_ac is None or np.shape(e_ac) != (grid.n_ac, 3):
        from .errors import ContractError

        raise ContractError("operating point lacks voltages for every AC node")
    f_seq, h_seq = sequence_fh_blocks(grid.y_ac, np.asarray(e_ac), i)
    return f_seq[n], h_seq
