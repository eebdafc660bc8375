"""Bundled test grid and small synthetic grids for tests and experiments."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..grid import AcBranch, AcNode, Converter, DcBranch, DcNode, GridModel, NodeRole, Setpoints

BUNDLED = "cigre_lv_hybrid.yaml"


def bundled_path():
    return resources.files(__name__).joinpath(BUNDLED)


def load_bundled() -> GridModel:
    """The 26-node hybrid grid shipped with the package (reconstructed data)."""
    from ..io import grid_from_dict
    import yaml

    doc = yaml.safe_load(bundled_path().read_text())
    return grid_from_dict(doc, source="cigre_lv_hybrid")


def dc_two_node(p2: float = 0.0, conductance: float = 10.0, v1: float = 1.0) -> GridModel:
    """DC-only grid: a V node (``v1``) feeding a P node (``p2``) through ``conductance``."""
    sp = Setpoints.zeros(0, 2, 0).replace(p_dc=[0.0, p2], v_dc=[v1, 1.0])
    return GridModel(
        ac_nodes=(),
        dc_nodes=(DcNode("D1", NodeRole.DC_V), DcNode("D2", NodeRole.DC_P)),
        ac_branches=(),
        dc_branches=(DcBranch(0, 1, conductance, "D1-D2"),),
        converters=(),
        setpoints=sp,
        name="dc-two-node",
    )


def _tree(rng, n):
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def random_grid(
    seed: int,
    n_ac: int = 4,
    n_dc: int = 3,
    n_ic: int = 1,
    *,
    pv: bool = True,
    shunts: bool = True,
    load: float = 0.08,
    balanced: bool = False,
) -> GridModel:
    """Small random radial hybrid grid in per-unit.

    Node 0 is the AC slack. The last ``n_ic`` AC nodes and the first ``n_ic``
    DC nodes host converters; converter 0 regulates the DC voltage, the others
    run in P-Q mode. ``balanced=True`` gives identical phases everywhere.
    """
    rng = np.random.default_rng(seed)
    if n_ic > min(n_ac - 1, n_dc):
        raise ValueError("not enough nodes for the requested converters")
    ic_ac = list(range(n_ac - n_ic, n_ac))
    free = [i for i in range(1, n_ac) if i not in ic_ac]
    pv_nodes = {free[-1]} if pv and len(free) >= 2 else set()

    conv = []
    for c in range(n_ic):
        mode = NodeRole.IC_VDCQ if c == 0 else NodeRole.IC_PQ
        conv.append(Converter(f"IC{c + 1}", ic_ac[c], c, mode))

    ac_roles = []
    for i in range(n_ac):
        if i == 0:
            ac_roles.append(NodeRole.AC_SLACK)
        elif i in ic_ac:
            ac_roles.append(conv[ic_ac.index(i)].mode)
        elif i in pv_nodes:
            ac_roles.append(NodeRole.AC_PV)
        else:
            ac_roles.append(NodeRole.AC_PQ)
    dc_roles = [conv[j].mode if j < n_ic else NodeRole.DC_P for j in range(n_dc)]
    if n_dc and not any(r is NodeRole.IC_VDCQ for r in dc_roles):
        dc_roles[-1] = NodeRole.DC_V
    elif n_dc > n_ic + 1 and rng.random() < 0.5:
        dc_roles[-1] = NodeRole.DC_V

    def spread(size):
        if balanced:
            return np.full(size, rng.uniform(-1.0, 0.25))
        return rng.uniform(-1.0, 0.25, size)

    ac_branches = []
    for a, b in _tree(rng, n_ac):
        z1 = complex(rng.uniform(0.01, 0.05), rng.uniform(0.005, 0.03))
        y1 = 1j * rng.uniform(0.0, 0.02) if shunts else 0.0
        ac_branches.append(AcBranch.from_sequence(a, b, z1, 3.0 * z1, y1, 0.6 * y1, name=f"L{a}-{b}"))
    dc_branches = [DcBranch(a, b, rng.uniform(20.0, 80.0), f"D{a}-{b}") for a, b in _tree(rng, n_dc)]

    sp = Setpoints.zeros(n_ac, n_dc, n_ic)
    p_ac = np.zeros((n_ac, 3))
    q_ac = np.zeros((n_ac, 3))
    vm = np.ones((n_ac, 3))
    for i, role in enumerate(ac_roles):
        if role is NodeRole.AC_PQ:
            p_ac[i] = load * spread(3)
            q_ac[i] = 0.3 * load * spread(3)
        elif role is NodeRole.AC_PV:
            p_ac[i] = load * abs(spread(1))
            vm[i] = rng.uniform(0.998, 1.004)
    p_dc = np.where([r is NodeRole.DC_P for r in dc_roles], load * rng.uniform(-1.0, 0.5, n_dc), 0.0)
    v_dc = rng.uniform(0.99, 1.01, n_dc) if n_dc else np.zeros(0)
    p_ic = load * rng.uniform(-0.5, 0.5, n_ic)
    q_ic = 0.3 * load * rng.uniform(-0.5, 0.5, n_ic)
    sp = sp.replace(p_ac=p_ac, q_ac=q_ac, vm_ac=vm, p_dc=p_dc, v_dc=v_dc, p_ic=p_ic, q_ic=q_ic)

    return GridModel(
        ac_nodes=tuple(AcNode(f"A{i}", r) for i, r in enumerate(ac_roles)),
        dc_nodes=tuple(DcNode(f"D{j}", r) for j, r in enumerate(dc_roles)),
        ac_branches=tuple(ac_branches),
        dc_branches=tuple(dc_branches),
        converters=tuple(conv),
        setpoints=sp,
        name=f"random-{seed}",
    )


def ac_only(grid: GridModel, op) -> GridModel:
    """The AC side of ``grid`` alone, each converter replaced by a P-Q node.

    The replacement nodes draw exactly what the converters exchanged at
    ``op``, so the AC operating point is unchanged and the DC grid drops out.
    """
    s = np.asarray(op.s_ac)
    p = np.array(grid.setpoints.p_ac)
    q = np.array(grid.setpoints.q_ac)
    for conv in grid.converters:
        p[conv.ac_node] = s[conv.ac_node].real
        q[conv.ac_node] = s[conv.ac_node].imag
    sp = Setpoints.zeros(grid.n_ac, 0, 0).replace(
        p_ac=p, q_ac=q, vm_ac=grid.setpoints.vm_ac, e_slack=grid.setpoints.e_slack
    )
    return GridModel(
        ac_nodes=tuple(AcNode(n.name, NodeRole.AC_PQ if n.role.is_ic else n.role) for n in grid.ac_nodes),
        dc_nodes=(),
        ac_branches=grid.ac_branches,
        dc_branches=(),
        converters=(),
        setpoints=sp,
        bases=grid.bases,
        name=f"{grid.name}-ac",
    )
