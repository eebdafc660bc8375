import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridsc.cases import dc_two_node, random_grid
from hybridsc.controls import ControlKind, ControlVariable
from hybridsc.errors import ContractError, SingularA, StructuralError, ZeroVoltageMagnitude
from hybridsc.grid import NodeRole
from hybridsc.powerflow import OperatingPoint, solve_pf
from hybridsc.sensitivity import (
    all_sensitivities,
    assemble_A,
    assemble_b,
    branch_currents,
    compute_fh,
    current_sensitivities,
    solve_sc,
    to_polar,
)
from hybridsc.sequence import NEGATIVE, ZERO, T
from hybridsc.validation import PerturbationSpec, numeric_sc


@pytest.fixture(scope="module")
def bundled_sys(bundled, bundled_op):
    return assemble_A(bundled, bundled_op)


@pytest.fixture(scope="module")
def bundled_results(bundled, bundled_op, bundled_sys):
    return all_sensitivities(bundled, bundled_op, system=bundled_sys)


# -- F/H identities -----------------------------------------------------------------------------


def test_fh_dc_two_node_example():
    g = dc_two_node()
    op = OperatingPoint.from_state(g, np.zeros((0, 3)), [1.0, 0.9899])
    fh = compute_fh(g, op)
    assert fh.h_dc[1] == pytest.approx(-0.101, abs=1e-12)
    assert fh.f_dc[1, 1] == pytest.approx(9.899, abs=1e-12)


def test_fh_at_unit_voltages():
    g = random_grid(4, 5, 2, 1)
    e = np.ones((g.n_ac, 3), dtype=complex)
    fh = compute_fh(g, OperatingPoint.from_state(g, e, np.ones(g.n_dc)))
    assert np.allclose(fh.f_ac, np.conj(g.y_ac))


def test_h_vanishes_at_flat_start_without_shunts():
    g = random_grid(4, 5, 2, 1, shunts=False)
    a2 = np.exp(-2j * np.pi / 3)
    e = np.tile([1, a2, np.conj(a2)], (g.n_ac, 1))
    fh = compute_fh(g, OperatingPoint.from_state(g, e, np.ones(g.n_dc)))
    assert np.abs(fh.h_ac).max() < 1e-12
    assert np.abs(fh.h_dc).max() < 1e-12


# -- A and b ----------------------------------------------------------------------------------


def test_bundled_dimension(bundled_sys):
    assert bundled_sys.A.shape == (110, 110)
    assert bundled_sys.rcond >= 1e-12


def test_a_is_read_only(bundled_sys):
    with pytest.raises(ValueError):
        bundled_sys.A[0, 0] = 1.0


def test_b_unit_indicator(bundled, bundled_sys):
    i = bundled.ac_index("B09")
    b = assemble_b(bundled_sys, ControlVariable.ac_p(i, 1))
    assert b.sum() == 1.0 and b[bundled_sys.index.re(i, 1)] == 1.0


def test_b_for_dc_voltage_carries_pinned_column(bundled, bundled_sys):
    c = next(k for k, cv in enumerate(bundled.converters) if cv.mode is NodeRole.IC_VDCQ)
    j = bundled.converters[c].dc_node
    b = assemble_b(bundled_sys, ControlVariable.ic_vdc(c))
    expected = -bundled_sys.pinned_columns[j]
    expected[bundled_sys.index.dc(j)] = 1.0
    assert np.array_equal(b, expected)


def test_misapplied_control_rejected(bundled_sys):
    with pytest.raises(ContractError):
        assemble_b(bundled_sys, ControlVariable.dc_v(0))  # B19 is converter-held, not a DC-V node


# -- closed-form micro case -------------------------------------------------------------------


def test_dc_two_node_closed_form():
    g = dc_two_node(p2=0.0)
    op = solve_pf(g)
    r = solve_sc(assemble_A(g, op), ControlVariable.dc_p(1))
    assert r.du_dc[1] == pytest.approx(0.1, abs=1e-12)
    assert r.du_dc[0] == 0.0
    assert r.di_dc[0] == pytest.approx(-1.0, abs=1e-12)


def test_dc_two_node_voltage_control():
    g = dc_two_node(p2=-0.1)
    op = solve_pf(g)
    r = solve_sc(assemble_A(g, op), ControlVariable.dc_v(0))
    assert r.du_dc[0] == 1.0
    # dP2 = 0 = E2*10*(dE2 - dE1) + 10*(E2 - E1)*dE2
    e2 = op.e_dc[1]
    assert r.du_dc[1] == pytest.approx(10 * e2 / (10 * e2 + 10 * (e2 - 1)), abs=1e-12)


def test_singular_a_at_nose_point():
    g = dc_two_node(p2=-0.1)
    op = OperatingPoint.from_state(g, np.zeros((0, 3)), [1.0, 0.5])
    with pytest.raises(SingularA) as info:
        assemble_A(g, op)
    assert info.value.condition_estimate < 1e-12


# -- invariants on the bundled case ------------------------------------------------------------


def test_result_count_from_roles(bundled, bundled_results):
    roles = bundled.ac_role
    expected = (
        6 * sum(r is NodeRole.AC_PQ for r in roles)
        + 6 * sum(r is NodeRole.AC_PV for r in roles)
        + sum(r in (NodeRole.DC_P, NodeRole.DC_V) for r in bundled.dc_role)
        + 2 * len(bundled.converters)
    )
    assert len(bundled_results) == expected == 90


def test_residual_invariant(bundled_results):
    for r in bundled_results:
        assert r.residual <= 1e-10 * max(1.0, np.abs(r.b).max())


def test_slack_entries_are_zero(bundled, bundled_results):
    slack = bundled.nodes_with(NodeRole.AC_SLACK)
    for r in bundled_results:
        assert np.all(r.du_ac[slack] == 0)


def test_sequence_constraints(bundled, bundled_results):
    worst = 0.0
    for r in bundled_results:
        for conv in bundled.converters:
            s = T @ r.du_ac[conv.ac_node]
            worst = max(worst, abs(s[ZERO]), abs(s[NEGATIVE]))
    assert worst <= 1e-10


def test_pinned_voltage_invariance(bundled, bundled_results):
    pv = [(i, p) for i in bundled.nodes_with(NodeRole.AC_PV) for p in range(3)]
    held_dc = {j for j, r in enumerate(bundled.dc_role) if r in (NodeRole.DC_V, NodeRole.IC_VDCQ)}
    for r in bundled_results:
        x = r.x
        for i, p in pv:
            own = x.kind is ControlKind.AC_VMAG and (x.index, x.phase) == (i, p)
            assert r.dmag_ac[i, p] == pytest.approx(1.0 if own else 0.0, abs=1e-12)
        for j in held_dc:
            own = (x.kind is ControlKind.DC_V and x.index == j) or (
                x.kind is ControlKind.IC_VDC and bundled.converters[x.index].dc_node == j
            )
            assert r.du_dc[j] == (1.0 if own else 0.0)


def test_batch_equals_single_and_parallel(bundled, bundled_op, bundled_sys, bundled_results):
    # repeated: concurrent LAPACK solves once produced sporadic wrong answers here
    for _ in range(10):
        par = all_sensitivities(bundled, bundled_op, parallel=True, system=bundled_sys)
        for a, b in zip(bundled_results, par):
            assert a.x == b.x and np.array_equal(a.u, b.u)
    for k in (0, 17, 89):
        one = solve_sc(assemble_A(bundled, bundled_op), bundled_results[k].x)
        assert np.array_equal(one.u, bundled_results[k].u)


def test_batch_is_fast(bundled, bundled_op):
    t0 = time.perf_counter()
    all_sensitivities(bundled, bundled_op)
    assert time.perf_counter() - t0 <= 0.5


# -- polar conversion ---------------------------------------------------------------------------


def test_polar_zero_derivative():
    op = OperatingPoint.from_state(random_grid(0, 3, 2, 1), np.full((3, 3), 1.0 + 0.2j), np.ones(2))
    mag, ang = to_polar(None, op, np.zeros((3, 3)))
    assert not mag.any() and not ang.any()


def test_polar_pure_rotation():
    op = OperatingPoint.from_state(random_grid(0, 3, 2, 1), np.ones((3, 3), dtype=complex), np.ones(2))
    mag, ang = to_polar(None, op, np.full((3, 3), 0.7j))
    assert np.allclose(mag, 0, atol=1e-15) and np.allclose(ang, 0.7)


@given(st.integers(0, 2**32 - 1))
def test_polar_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    e = (rng.uniform(0.5, 1.5, (3, 3)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (3, 3))))
    d = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    op = OperatingPoint.from_state(random_grid(0, 3, 2, 1), e, np.ones(2))
    mag, ang = to_polar(None, op, d)
    h = 1e-7
    fd_mag = (np.abs(e + h * d) - np.abs(e - h * d)) / (2 * h)
    fd_ang = np.angle((e + h * d) / (e - h * d)) / (2 * h)
    assert np.abs(mag - fd_mag).max() <= 1e-6
    assert np.abs(ang - fd_ang).max() <= 1e-6


def test_zero_voltage_names_node(bundled):
    e = np.ones((bundled.n_ac, 3), dtype=complex)
    e[4, 2] = 0
    op = OperatingPoint.from_state(bundled, e, np.ones(bundled.n_dc))
    with pytest.raises(ZeroVoltageMagnitude, match=bundled.ac_nodes[4].name):
        to_polar(bundled, op, np.zeros_like(e))


# -- branch currents --------------------------------------------------------------------------


def test_zero_endpoint_sensitivities_give_zero_current(bundled, bundled_op):
    di_ac, di_dc = current_sensitivities(
        bundled, bundled_op, (np.zeros((bundled.n_ac, 3)), np.zeros(bundled.n_dc))
    )
    assert not di_ac.any() and not di_dc.any()


def test_current_selection(bundled, bundled_op, bundled_results):
    r = bundled_results[3]
    name = bundled.ac_branches[2].name
    di_ac, di_dc = current_sensitivities(bundled, bundled_op, r, ac_branches=[name], dc_branches=[1])
    assert np.array_equal(di_ac[0], r.di_ac[2]) and di_dc[0] == r.di_dc[1]
    with pytest.raises(StructuralError):
        current_sensitivities(bundled, bundled_op, r, ac_branches=["nope"])
    with pytest.raises(StructuralError):
        current_sensitivities(bundled, bundled_op, r, dc_branches=[99])


def test_dc_branch_currents_satisfy_kcl(bundled, bundled_op):
    i_ac, i_dc = branch_currents(bundled, bundled_op.e_ac, bundled_op.e_dc)
    assert i_ac.shape == (len(bundled.ac_branches), 3)
    net = np.zeros(bundled.n_dc)
    for br, i in zip(bundled.dc_branches, i_dc):
        net[br.from_node] += i
        net[br.to_node] -= i
    assert np.allclose(net, bundled.y_dc @ bundled_op.e_dc, atol=1e-13)


def test_current_sensitivities_match_oracle(bundled, bundled_op, bundled_results):
    # central differences: a forward step of 0.005 leaves O(delta) curvature of ~1e-2 on the
    # IC Vdc currents, which would swamp the 5e-3 bound without saying anything about A
    worst = 0.0
    for r in bundled_results:
        num = numeric_sc(bundled, bundled_op, PerturbationSpec.default(r.x), central=True)
        worst = max(worst, np.abs(num.di_ac - r.di_ac).max(), np.abs(num.di_dc - r.di_dc).max())
    assert worst <= 5e-3


# -- balanced cross-check and AC-only degeneration -------------------------------------------


@pytest.mark.parametrize("seed", [1, 2, 3, 5])
def test_balanced_path_agrees_on_symmetric_controls(seed):
    g = random_grid(seed, 5, 3, 2, balanced=True)
    op = solve_pf(g, tol=1e-12)
    seq, bal = assemble_A(g, op), assemble_A(g, op, balanced=True)
    for x in g.controls():
        if x.kind.value.startswith("ac"):
            if x.phase:
                continue
            # a symmetric AC setpoint change moves all three phases together
            xs = [ControlVariable(x.kind, x.index, p) for p in range(3)]
            a = sum(solve_sc(seq, v).u for v in xs)
            b = sum(solve_sc(bal, v).u for v in xs)
        else:
            a, b = solve_sc(seq, x).u, solve_sc(bal, x).u
        assert np.abs(a - b).max() <= 1e-10


def test_ac_only_matches_oracle():
    g = random_grid(12, 6, 0, 0)
    assert g.n_dc == 0 and not g.converters
    op = solve_pf(g, tol=1e-13)
    for r in all_sensitivities(g, op):
        num = numeric_sc(g, op, PerturbationSpec(r.x, 1e-4), central=True)
        assert np.abs(num.du_ac - r.du_ac).max() <= 1e-4
