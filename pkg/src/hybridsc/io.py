"""Grid description files.

A grid file is a YAML document in SI units; it is converted to per-unit on
load. Layout (every key other than those marked optional is required)::

    name: my-grid                                  # optional
    bases: {power: 100000, ac_voltage: 400, dc_voltage: 800}   # W, V (AC line-to-line)
    ac_nodes:
      - {id: B01, role: slack}                     # slack | pq | pv | ic
    dc_nodes:
      - {id: B19, role: ic}                        # p | v | ic
    ac_branches:                                   # per-km sequence data
      - {from: B01, to: B02, length_km: 0.035,
         r1: 0.284, x1: 0.083,                     # ohm/km, positive sequence
         r0: 1.136, x0: 0.417,                     # optional, default r1/x1
         b1: 0.0, b0: 0.0}                         # optional, micro-siemens/km
    dc_branches:
      - {from: B19, to: B20, length_km: 0.05, r: 0.32}        # ohm/km
    ics:
      - {id: IC1, ac: B15, dc: B19, mode: vdc_q}  # vdc_q | pq; optional
                                                   # allow_negative_sequence
    setpoints:
      slack: {B01: {magnitude: 230.94, angle_deg: [0, -120, 120]}}   # optional
      ac:  {B09: {p: [-5000, -5000, -5000], q: -1500}}  # W / VAr per phase
      pv:  {B10: {p: 5000, v: 235.0}}                   # V phase-to-ground
      dc:  {B23: {p: -10000}, B26: {v: 800}}
      ics: {IC1: {q: 0, v_dc: 800}, IC2: {p: 10000, q: 0}}

Per-phase values accept a scalar (same on all phases) or a list of three.
Powers use the generator convention (loads are negative). Unknown keys are
rejected.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import GridFileError
from .grid import AcBranch, AcNode, Bases, Converter, DcBranch, DcNode, GridModel, NodeRole, Setpoints

_TOP = {"name", "bases", "ac_nodes", "dc_nodes", "ac_branches", "dc_branches", "ics", "setpoints"}
_BASES = {"power", "ac_voltage", "dc_voltage"}
_NODE = {"id", "role"}
_AC_BRANCH = {"from", "to", "length_km", "r1", "x1", "r0", "x0", "b1", "b0", "name"}
_DC_BRANCH = {"from", "to", "length_km", "r", "name"}
_IC = {"id", "ac", "dc", "mode", "allow_negative_sequence"}
_SETPOINTS = {"slack", "ac", "pv", "dc", "ics"}
_SP_SLACK = {"magnitude", "angle_deg"}
_SP_AC = {"p", "q"}
_SP_PV = {"p", "v"}
_SP_DC = {"p", "v"}
_SP_IC = {"p", "q", "v_dc", "p_neg", "q_neg"}

_AC_ROLE = {"slack": NodeRole.AC_SLACK, "pq": NodeRole.AC_PQ, "pv": NodeRole.AC_PV, "ic": None}
_DC_ROLE = {"p": NodeRole.DC_P, "v": NodeRole.DC_V, "ic": None}
_MODE = {"pq": NodeRole.IC_PQ, "vdc_q": NodeRole.IC_VDCQ}


def _keys(obj, allowed: set, where: str, required: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise GridFileError(f"{where}: expected a mapping, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise GridFileError(f"{where}: unknown key(s) {', '.join(sorted(map(str, unknown)))}")
    missing = set(required) - set(obj)
    if missing:
        raise GridFileError(f"{where}: missing key(s) {', '.join(sorted(missing))}")
    return obj


def _phases(value, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(3, float(arr))
    if arr.shape != (3,):
        raise GridFileError(f"{where}: expected a scalar or three values")
    return arr


def grid_from_dict(doc: dict, *, source: str = "<dict>") -> GridModel:
    """Build a :class:`GridModel` from a parsed grid document."""
    _keys(doc, _TOP, source, {"bases", "ac_nodes", "dc_nodes"})
    b = _keys(doc["bases"], _BASES, "bases", _BASES)
    bases = Bases(float(b["power"]), float(b["ac_voltage"]), float(b["dc_voltage"]))
    if min(bases.power, bases.ac_voltage, bases.dc_voltage) <= 0:
        raise GridFileError("bases: values must be positive")

    ics_doc = doc.get("ics") or []
    modes = {}
    for n, ic in enumerate(ics_doc):
        _keys(ic, _IC, f"ics[{n}]", {"id", "ac", "dc", "mode"})
        if ic["mode"] not in _MODE:
            raise GridFileError(f"ics[{n}]: mode must be one of {sorted(_MODE)}")
        modes[("ac", ic["ac"])] = _MODE[ic["mode"]]
        modes[("dc", ic["dc"])] = _MODE[ic["mode"]]

    def nodes(items, table, side):
        out, names = [], {}
        for n, node in enumerate(items or []):
            _keys(node, _NODE, f"{side}_nodes[{n}]", _NODE)
            name = str(node["id"])
            if name in names:
                raise GridFileError(f"{side}_nodes: duplicate id {name}")
            if node["role"] not in table:
                raise GridFileError(f"{side}_nodes[{n}]: role must be one of {sorted(table)}")
            role = table[node["role"]]
            if role is None:
                if (side, node["id"]) not in modes:
                    raise GridFileError(f"{side} node {name} has role ic but no converter")
                role = modes[(side, node["id"])]
            names[name] = len(out)
            out.append((AcNode if side == "ac" else DcNode)(name, role))
        return out, names

    ac_nodes, ac_id = nodes(doc["ac_nodes"], _AC_ROLE, "ac")
    dc_nodes, dc_id = nodes(doc["dc_nodes"], _DC_ROLE, "dc")

    def lookup(table, name, where):
        try:
            return table[str(name)]
        except KeyError:
            raise GridFileError(f"{where}: unknown node {name}") from None

    z_base = bases.ac_impedance
    ac_branches = []
    for n, br in enumerate(doc.get("ac_branches") or []):
        where = f"ac_branches[{n}]"
        _keys(br, _AC_BRANCH, where, {"from", "to", "r1", "x1"})
        length = float(br.get("length_km", 1.0))
        z1 = complex(br["r1"], br["x1"]) * length / z_base
        z0 = complex(br.get("r0", br["r1"]), br.get("x0", br["x1"])) * length / z_base
        if z1 == 0 or z0 == 0:
            raise GridFileError(f"{where}: zero series impedance")
        y1 = 1j * float(br.get("b1", 0.0)) * 1e-6 * length * z_base
        y0 = 1j * float(br.get("b0", br.get("b1", 0.0))) * 1e-6 * length * z_base
        ac_branches.append(
            AcBranch.from_sequence(
                lookup(ac_id, br["from"], where), lookup(ac_id, br["to"], where), z1, z0, y1, y0,
                name=str(br.get("name", f"{br['from']}-{br['to']}")),
            )
        )

    dc_branches = []
    for n, br in enumerate(doc.get("dc_branches") or []):
        where = f"dc_branches[{n}]"
        _keys(br, _DC_BRANCH, where, {"from", "to", "r"})
        r = float(br["r"]) * float(br.get("length_km", 1.0)) / bases.dc_impedance
        if r <= 0:
            raise GridFileError(f"{where}: resistance must be positive")
        dc_branches.append(
            DcBranch(lookup(dc_id, br["from"], where), lookup(dc_id, br["to"], where), 1.0 / r,
                     name=str(br.get("name", f"{br['from']}-{br['to']}")))
        )

    converters = [
        Converter(str(ic["id"]), lookup(ac_id, ic["ac"], f"ics[{n}]"), lookup(dc_id, ic["dc"], f"ics[{n}]"),
                  _MODE[ic["mode"]], bool(ic.get("allow_negative_sequence", False)))
        for n, ic in enumerate(ics_doc)
    ]
    ic_id = {c.name: k for k, c in enumerate(converters)}

    sp = Setpoints.zeros(len(ac_nodes), len(dc_nodes), len(converters))
    arrays = {name: np.array(getattr(sp, name)) for name in sp.__dataclass_fields__}
    s_base, v_ac, v_dc = bases.power, bases.ac_phase_voltage, bases.dc_voltage
    sp_doc = _keys(doc.get("setpoints") or {}, _SETPOINTS, "setpoints")

    for name, entry in (sp_doc.get("slack") or {}).items():
        where = f"setpoints.slack.{name}"
        _keys(entry, _SP_SLACK, where)
        i = lookup(ac_id, name, where)
        mag = _phases(entry.get("magnitude", v_ac), where) / v_ac
        ang = _phases(entry.get("angle_deg", [0.0, -120.0, 120.0]), where)
        arrays["e_slack"][i] = mag * np.exp(1j * np.radians(ang))
    for name, entry in (sp_doc.get("ac") or {}).items():
        where = f"setpoints.ac.{name}"
        _keys(entry, _SP_AC, where)
        i = lookup(ac_id, name, where)
        arrays["p_ac"][i] = _phases(entry.get("p", 0.0), where) / s_base
        arrays["q_ac"][i] = _phases(entry.get("q", 0.0), where) / s_base
    for name, entry in (sp_doc.get("pv") or {}).items():
        where = f"setpoints.pv.{name}"
        _keys(entry, _SP_PV, where, {"v"})
        i = lookup(ac_id, name, where)
        arrays["p_ac"][i] = _phases(entry.get("p", 0.0), where) / s_base
        arrays["vm_ac"][i] = _phases(entry["v"], where) / v_ac
    for name, entry in (sp_doc.get("dc") or {}).items():
        where = f"setpoints.dc.{name}"
        _keys(entry, _SP_DC, where)
        j = lookup(dc_id, name, where)
        if "p" in entry:
            arrays["p_dc"][j] = float(entry["p"]) / s_base
        if "v" in entry:
            arrays["v_dc"][j] = float(entry["v"]) / v_dc
    for name, entry in (sp_doc.get("ics") or {}).items():
        where = f"setpoints.ics.{name}"
        _keys(entry, _SP_IC, where)
        if str(name) not in ic_id:
            raise GridFileError(f"{where}: unknown converter")
        k = ic_id[str(name)]
        for key, arr in (("p", "p_ic"), ("q", "q_ic"), ("p_neg", "p_neg_ic"), ("q_neg", "q_neg_ic")):
            if key in entry:
                arrays[arr][k] = float(entry[key]) / s_base
        if "v_dc" in entry:
            arrays["v_dc"][converters[k].dc_node] = float(entry["v_dc"]) / v_dc

    return GridModel(
        ac_nodes=tuple(ac_nodes),
        dc_nodes=tuple(dc_nodes),
        ac_branches=tuple(ac_branches),
        dc_branches=tuple(dc_branches),
        converters=tuple(converters),
        setpoints=Setpoints(**arrays),
        bases=bases,
        name=str(doc.get("name", source)),
    )


def load_grid(path) -> GridModel:
    """Read a grid file (see module docstring) into per-unit form."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GridFileError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise GridFileError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise GridFileError(f"{path}: top level must be a mapping")
    return grid_from_dict(doc, source=path.stem)
