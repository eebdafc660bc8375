import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridsc.cases import random_grid
from hybridsc.errors import ContractError
from hybridsc.grid import AcBranch, GridModel, AcNode, NodeRole, Setpoints
from hybridsc.powerflow import OperatingPoint
from hybridsc.sequence import (
    ALPHA,
    T,
    T_INV,
    SequenceTriple,
    abc_to_seq,
    from_sequence,
    seq_to_abc,
    sequence_admittance,
    sequence_fh,
    sequence_fh_blocks,
    to_sequence,
)

A2 = ALPHA**2
finite = st.floats(-10, 10, allow_nan=False)
phasor = st.builds(complex, finite, finite)
triple = st.lists(phasor, min_size=3, max_size=3)


def test_alpha_orientation():
    assert abs(ALPHA**2 + ALPHA + 1) < 1e-15
    assert ALPHA.imag > 0


def test_t_times_inverse_is_identity():
    assert np.abs(T @ T_INV - np.eye(3)).max() < 1e-14
    assert np.abs(T_INV @ T - np.eye(3)).max() < 1e-14


def test_matrices_are_read_only():
    with pytest.raises(ValueError):
        T[0, 0] = 2


def test_positive_sequence_set():
    s = to_sequence([1, A2, ALPHA])
    assert np.allclose(s.as_array(), [0, 1, 0], atol=1e-15)


def test_common_mode_set():
    s = to_sequence([1, 1, 1])
    assert np.allclose(s.as_array(), [1, 0, 0], atol=1e-15)


def test_unbalanced_set_against_direct_product():
    e = np.array([1.0, 0.9 * A2, 1.1 * ALPHA])
    a = np.exp(2j * np.pi / 3)
    # written out element by element, independent of the module's matrix
    expected = [
        (e[0] + e[1] + e[2]) / 3,
        (e[0] + a * e[1] + a * a * e[2]) / 3,
        (e[0] + a * a * e[1] + a * e[2]) / 3,
    ]
    assert np.allclose(to_sequence(e).as_array(), expected, atol=1e-15)
    assert np.allclose(from_sequence(SequenceTriple(*expected)), e, atol=1e-14)


@pytest.mark.parametrize(
    "seq, abc", [((0, 1, 0), (1, A2, ALPHA)), ((1, 0, 0), (1, 1, 1))]
)
def test_from_sequence_examples(seq, abc):
    assert np.allclose(from_sequence(seq), abc, atol=1e-15)


@given(triple)
def test_round_trip(values):
    e = np.array(values)
    assert np.abs(from_sequence(to_sequence(e)) - e).max() <= 1e-12 * max(1, np.abs(e).max())
    s = SequenceTriple(*values)
    assert np.abs(to_sequence(from_sequence(s)).as_array() - e).max() <= 1e-12 * max(1, np.abs(e).max())


@given(triple, triple, phasor, phasor)
def test_linearity(x, y, a, b):
    x, y = np.array(x), np.array(y)
    lhs = to_sequence(a * x + b * y).as_array()
    rhs = a * to_sequence(x).as_array() + b * to_sequence(y).as_array()
    assert np.abs(lhs - rhs).max() <= 1e-11 * max(1, np.abs(lhs).max())


def test_vectorised_transforms_match_scalar():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    s = abc_to_seq(e)
    for k in range(5):
        assert np.allclose(s[k], to_sequence(e[k]).as_array())
    assert np.allclose(seq_to_abc(s), e)


def test_sequence_admittance_of_circulant_is_diagonal():
    br = AcBranch.from_sequence(0, 1, 0.02 + 0.01j, 0.06 + 0.03j)
    y_seq = sequence_admittance(br.series)
    assert np.abs(y_seq - np.diag(np.diag(y_seq))).max() < 1e-12
    assert np.isclose(y_seq[1, 1], 1 / (0.02 + 0.01j))
    assert np.isclose(y_seq[0, 0], 1 / (0.06 + 0.03j))


def _single_node_grid(y):
    """One node with a 3x3 shunt y; enough to exercise the node-pair identities."""
    br = AcBranch(0, 1, np.zeros((3, 3)), shunt_from=y, shunt_to=np.zeros((3, 3)))
    return GridModel(
        ac_nodes=(AcNode("S", NodeRole.AC_SLACK), AcNode("N", NodeRole.AC_PQ)),
        dc_nodes=(),
        ac_branches=(br,),
        dc_branches=(),
        converters=(),
        setpoints=Setpoints.zeros(2, 0, 0),
    )


def _op(grid, e_ac):
    return OperatingPoint.from_state(grid, e_ac, np.zeros(grid.n_dc))


def test_h_seq_vanishes_at_flat_start_without_shunts():
    g = random_grid(2, 5, 3, 1, shunts=False)
    e = np.tile([1, A2, ALPHA], (g.n_ac, 1))
    for i in range(g.n_ac):
        for n in range(g.n_ac):
            _, h = sequence_fh(g, _op(g, e), i, n)
            assert np.abs(h).max() < 1e-12


def test_f_seq_for_scalar_self_admittance():
    y = 3.0 - 4.0j
    g = _single_node_grid(y * np.eye(3))
    e = np.tile([1, A2, ALPHA], (2, 1))
    f, _ = sequence_fh(g, _op(g, e), 0, 0)
    # direct multiply: diag(T E) conj(T (yI) T^-1) = conj(y) diag(T E)
    e_seq = T @ e[0]
    assert np.allclose(f[1], np.conj(y) * np.diag(e_seq)[1], atol=1e-13)
    assert np.allclose(f[1], [0, np.conj(y), 0], atol=1e-13)


def test_f_seq_is_diagonal_for_circulant_balanced():
    g = random_grid(5, 6, 3, 1)
    assert all(br.is_circulant for br in g.ac_branches)
    e = np.tile([1, A2, ALPHA], (g.n_ac, 1)) * np.linspace(0.97, 1.03, g.n_ac)[:, None]
    for i in range(g.n_ac):
        for n in range(g.n_ac):
            f, _ = sequence_fh(g, _op(g, e), i, n)
            assert np.abs(f - np.diag(np.diag(f))).max() < 1e-12


def test_f_seq_not_diagonal_for_non_circulant():
    y = np.array([[3, 1, 0.5], [1, 2, 0.2], [0.5, 0.2, 4]], dtype=complex)
    g = _single_node_grid(y)
    e = np.tile([1, A2, ALPHA], (2, 1))
    f, _ = sequence_fh(g, _op(g, e), 0, 0)
    assert np.abs(f - np.diag(np.diag(f))).max() > 1e-3


def test_sequence_power_linearisation_matches_finite_differences():
    """dS_seq = h_seq (T dE_i) + sum_n f_seq[n] conj(T dE_n), checked numerically."""
    g = random_grid(11, 5, 3, 1)
    rng = np.random.default_rng(0)
    e = np.tile([1, A2, ALPHA], (g.n_ac, 1)) * (1 + 0.05 * rng.normal(size=(g.n_ac, 3)))
    de = rng.normal(size=(g.n_ac, 3)) + 1j * rng.normal(size=(g.n_ac, 3))
    i = 3

    def s_seq(ev):
        cur = (g.y_ac @ ev.reshape(-1)).reshape(g.n_ac, 3)
        return (T @ ev[i]) * np.conj(T @ cur[i])

    h = 1e-7
    numeric = (s_seq(e + h * de) - s_seq(e - h * de)) / (2 * h)
    f, hs = sequence_fh_blocks(g.y_ac, e, i)
    analytic = hs @ (T @ de[i]) + sum(f[n] @ np.conj(T @ de[n]) for n in range(g.n_ac))
    assert np.abs(numeric - analytic).max() < 1e-7


def test_missing_voltages_is_contract_error():
    g = random_grid(0, 3, 2, 1)

    class Bare:
        e_ac = np.ones((1, 3))

    with pytest.raises(ContractError):
        sequence_fh(g, Bare(), 0, 0)
