"""Polarization analyzers: HWP then QWP in front of a PBS whose H output is detected."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .fock import waveplate

DEG = math.pi / 180

# (qwp, hwp) angles selecting each arm state; kets in the (H, V) basis
ARM_ANGLES = {
    "H": (0.0, 0.0),
    "V": (0.0, 45 * DEG),
    "D": (0.0, 22.5 * DEG),
    "A": (0.0, -22.5 * DEG),
    "R": (45 * DEG, 0.0),
    "L": (-45 * DEG, 0.0),
}


@dataclass(frozen=True)
class AnalyzerSetting:
    id: str
    qwp1: float
    hwp1: float
    qwp2: float
    hwp2: float

    @classmethod
    def named(cls, label: str) -> "AnalyzerSetting":
        """Setting from a two-letter label such as ``"HV"`` or ``"DR"``."""
        (q1, h1), (q2, h2) = ARM_ANGLES[label[0]], ARM_ANGLES[label[1]]
        return cls(label, q1, h1, q2, h2)

    def arm_jones(self, arm: int) -> np.ndarray:
        """Jones matrix (H, V basis) of the arm's waveplates; the PBS then passes H."""
        q, h = (self.qwp1, self.hwp1) if arm == 0 else (self.qwp2, self.hwp2)
        return waveplate("QWP", q).matrix @ waveplate("HWP", h).matrix

    def arm_ket(self, arm: int) -> np.ndarray:
        """Detected polarization state of one arm, in the qubit (V, H) basis."""
        hv = self.arm_jones(arm).conj().T @ np.array([1.0, 0.0])
        return hv[::-1].copy()

    def ket(self) -> np.ndarray:
        return np.kron(self.arm_ket(0), self.arm_ket(1))


def analyzer_projector(setting: AnalyzerSetting) -> np.ndarray:
    """Rank-one two-qubit projector in the (VV, VH, HV, HH) basis."""
    k = setting.ket()
    return np.outer(k, k.conj())


def standard_settings(kind: str = "16") -> list[AnalyzerSetting]:
    """``"16"``: {H, V, D, R} on each arm; ``"36"``: {H, V, D, A, R, L} on each arm;
    ``"logical"``: the four H/V products used for truth tables."""
    letters = {"16": "HVDR", "36": "HVDARL", "logical": "VH"}[str(kind)]
    return [AnalyzerSetting.named(a + b) for a, b in itertools.product(letters, repeat=2)]
