"""Control variables: the independent setpoints the sensitivities are taken against."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

PHASES = "abc"


class ControlKind(str, Enum):
    AC_P = "ac_p"
    AC_Q = "ac_q"
    AC_VMAG = "ac_vmag"
    DC_P = "dc_p"
    DC_V = "dc_v"
    IC_P = "ic_p"
    IC_Q = "ic_q"
    IC_VDC = "ic_vdc"


_PHASED = {ControlKind.AC_P, ControlKind.AC_Q, ControlKind.AC_VMAG}


@dataclass(frozen=True, order=True)
class ControlVariable:
    """One element of the control set.

    ``index`` is an AC node for the ``ac_*`` kinds, a DC node for ``dc_*``
    and a converter index for ``ic_*``. ``phase`` is 0..2 for AC kinds and
    ``None`` otherwise.
    """

    kind: ControlKind
    index: int
    phase: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ControlKind(self.kind))
        if (self.kind in _PHASED) != (self.phase is not None):
            raise ValueError(f"phase must be given exactly for AC controls, got {self}")
        if self.phase is not None and self.phase not in (0, 1, 2):
            raise ValueError(f"phase out of range: {self.phase}")

    @classmethod
    def ac_p(cls, i: int, phase: int) -> ControlVariable:
        return cls(ControlKind.AC_P, i, phase)

    @classmethod
    def ac_q(cls, i: int, phase: int) -> ControlVariable:
        return cls(ControlKind.AC_Q, i, phase)

    @classmethod
    def ac_vmag(cls, i: int, phase: int) -> ControlVariable:
        return cls(ControlKind.AC_VMAG, i, phase)

    @classmethod
    def dc_p(cls, j: int) -> ControlVariable:
        return cls(ControlKind.DC_P, j)

    @classmethod
    def dc_v(cls, j: int) -> ControlVariable:
        return cls(ControlKind.DC_V, j)

    @classmethod
    def ic_p(cls, c: int) -> ControlVariable:
        return cls(ControlKind.IC_P, c)

    @classmethod
    def ic_q(cls, c: int) -> ControlVariable:
        return cls(ControlKind.IC_Q, c)

    @classmethod
    def ic_vdc(cls, c: int) -> ControlVariable:
        return cls(ControlKind.IC_VDC, c)

    @property
    def is_voltage(self) -> bool:
        return self.kind in (ControlKind.AC_VMAG, ControlKind.DC_V, ControlKind.IC_VDC)

    def label(self, grid=None) -> str:
        """Short human label such as ``P[B09.a]`` or ``Vdc[IC1]``."""
        sym = {
            ControlKind.AC_P: "P",
            ControlKind.AC_Q: "Q",
            ControlKind.AC_VMAG: "V",
            ControlKind.DC_P: "Pdc",
            ControlKind.DC_V: "Vdc",
            ControlKind.IC_P: "Pic",
            ControlKind.IC_Q: "Qic",
            ControlKind.IC_VDC: "Vic",
        }[self.kind]
        if grid is None:
            name = str(self.index)
        elif self.kind.value.startswith("ac"):
            name = grid.ac_nodes[self.index].name
        elif self.kind.value.startswith("dc"):
            name = grid.dc_nodes[self.index].name
        else:
            name = grid.converters[self.index].name
        if self.phase is not None:
            name = f"{name}.{PHASES[self.phase]}"
        return f"{sym}[{name}]"
