"""Quantum-splitter source and the three-PPBS post-selected CNOT.

Logical encoding: 0 == V, 1 == H.  Two-qubit vectors are ordered
(VV, VH, HV, HH) with the control qubit first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fock import (
    DensityMatrix,
    FockError,
    ModeSet,
    ModeTransfer,
    PureState,
    apply_transfer,
    beam_splitter,
    chain,
    embed,
    post_select,
    ppbs,
    reduce_to_polarization,
    waveplate,
)

PORTS = ("control", "target", "dump1", "dump2")
GATE_MODES = ModeSet.product(PORTS)
SUCCESS_PATTERN = {"control": 1, "target": 1, "dump1": 0, "dump2": 0}

# input port a shares the mode slot of output port d, so a transmits into d
QS_MODES = ModeSet.product(("d", "c"), internals=(0, 1))

PPBS_R_H = 1.0 / 3.0
PPBS_R_V = 1.0

IDEAL_CNOT = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]],
    dtype=complex,
)

# single-qubit kets in the (V, H) basis
KETS = {
    "V": np.array([1.0, 0.0], dtype=complex),
    "H": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / math.sqrt(2),
    "A": np.array([-1.0, 1.0], dtype=complex) / math.sqrt(2),
}

_S2 = 1 / math.sqrt(2)
BELL_KETS = {
    "phi+": np.array([_S2, 0, 0, _S2], dtype=complex),
    "phi-": np.array([_S2, 0, 0, -_S2], dtype=complex),
    "psi+": np.array([0, _S2, _S2, 0], dtype=complex),
    "psi-": np.array([0, _S2, -_S2, 0], dtype=complex),
}
# separable inputs that the gate maps onto each Bell state
BELL_INPUTS = {"phi+": ("D", "V"), "phi-": ("A", "V"), "psi+": ("D", "H"), "psi-": ("A", "H")}

LOGICAL_INPUTS = ("VV", "VH", "HV", "HH")


@dataclass(frozen=True)
class QsSpec:
    """Quantum-splitter phase and the photon-overlap amplitude (HOM visibility = overlap**2)."""

    phase: float = 0.0
    overlap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "overlap", float(min(1.0, max(0.0, self.overlap))))

    @classmethod
    def from_visibility(cls, visibility: float, phase: float = 0.0) -> "QsSpec":
        return cls(phase, math.sqrt(max(0.0, visibility)))


@dataclass(frozen=True)
class TwoQubitState:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).reshape(4)
        if abs(np.vdot(a, a).real - 1) > 1e-10:
            raise FockError("two-qubit input state is not normalized")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def basis(cls, label: str) -> "TwoQubitState":
        return cls.product(label[0], label[1])

    @classmethod
    def product(cls, control, target) -> "TwoQubitState":
        c = KETS[control] if isinstance(control, str) else np.asarray(control, dtype=complex)
        t = KETS[target] if isinstance(target, str) else np.asarray(target, dtype=complex)
        return cls(np.kron(c, t))


@dataclass(frozen=True)
class CnotCircuit:
    mode_set: ModeSet
    transfer: ModeTransfer
    success_pattern: dict


def _on_port(element: ModeTransfer, port: str, modes: ModeSet) -> ModeTransfer:
    """Waveplate on one port's (H, V) pair, for each internal index."""
    out = np.eye(modes.count, dtype=complex)
    for k in (0, 1):
        t = embed(element, [modes.index(port, "H", k), modes.index(port, "V", k)], modes)
        out = t.matrix @ out
    return ModeTransfer(out, True, modes)


def _crossed_ppbs(port_a: str, port_b: str, modes: ModeSet, r_h=PPBS_R_H, r_v=PPBS_R_V) -> ModeTransfer:
    """PPBS between two ports with outputs relabelled so a reflected photon keeps its port."""
    cross = np.zeros((4, 4))
    cross[[1, 0, 3, 2], [0, 1, 2, 3]] = 1
    element = ModeTransfer(cross @ ppbs(r_h, r_v).matrix)
    out = np.eye(modes.count, dtype=complex)
    for k in (0, 1):
        idx = [modes.index(port_a, "H", k), modes.index(port_b, "H", k),
               modes.index(port_a, "V", k), modes.index(port_b, "V", k)]
        out = embed(element, idx, modes).matrix @ out
    return ModeTransfer(out, True, modes)


@lru_cache(maxsize=None)
def build_cnot_circuit() -> CnotCircuit:
    """Target Hadamard (HWP at 22.5 deg), central PPBS, swap-PPBS-swap equalizers on both arms,
    target Hadamard again, control phase plate.  The post-selected action is CNOT / 3
    up to a global phase."""
    m = GATE_MODES
    hadamard = _on_port(waveplate("HWP", math.pi / 8), "target", m)
    stages = [hadamard, _crossed_ppbs("control", "target", m)]
    for arm, dump in (("control", "dump1"), ("target", "dump2")):
        swap = _on_port(waveplate("HWP", math.pi / 4), arm, m)
        stages += [swap, _crossed_ppbs(arm, dump, m), swap]
    # the equalizers leave a relative minus sign on control H; a HWP at 0 deg undoes it
    stages += [hadamard, _on_port(waveplate("HWP", 0.0), "control", m)]
    return CnotCircuit(m, chain(*stages), dict(SUCCESS_PATTERN))


def qs_source_state(spec: QsSpec = QsSpec()) -> PureState:
    """Two V photons leaving the quantum splitter's 50/50 coupler on ports c and d.

    The pair enters as (|2>_a|0>_b + e^{i phase}|0>_a|2>_b)/sqrt(2); afterwards
    the port-d photon's internal index is rotated to overlap ``spec.overlap``
    with the port-c photon.
    """
    m = QS_MODES
    a, b = m.index("d", "V", 0), m.index("c", "V", 0)
    occ_a = [0] * m.count
    occ_a[a] = 2
    occ_b = [0] * m.count
    occ_b[b] = 2
    state = PureState(m, {tuple(occ_a): _S2, tuple(occ_b): np.exp(1j * spec.phase) * _S2})
    bs = embed(beam_splitter(0.5), [a, b], m)
    state = apply_transfer(state, bs)
    g, k = spec.overlap, math.sqrt(1 - spec.overlap**2)
    rot = embed(ModeTransfer(np.array([[g, -k], [k, g]])), [m.index("d", "V", 0), m.index("d", "V", 1)], m)
    return apply_transfer(state, rot)


def gate_input_state(psi: TwoQubitState, spec: QsSpec = QsSpec(), modes: ModeSet = GATE_MODES) -> PureState:
    """Control photon (internal 0) on port ``control``; target photon on ``target`` with
    internal amplitudes (overlap, sqrt(1 - overlap**2))."""
    g, k = spec.overlap, math.sqrt(1 - spec.overlap**2)
    amps = psi.amplitudes.reshape(2, 2)
    terms: dict[tuple[int, ...], complex] = {}
    for qc in range(2):
        for qt in range(2):
            if amps[qc, qt] == 0:
                continue
            for internal, w in ((0, g), (1, k)):
                if w == 0:
                    continue
                occ = [0] * modes.count
                occ[modes.index("control", "VH"[qc], 0)] += 1
                occ[modes.index("target", "VH"[qt], internal)] += 1
                key = tuple(occ)
                terms[key] = terms.get(key, 0j) + amps[qc, qt] * w
    return PureState(modes, terms)


def run_cnot(psi: TwoQubitState, spec: QsSpec = QsSpec(), circuit: CnotCircuit | None = None):
    """Post-selected gate output (reduced to polarization) and its success probability."""
    circuit = circuit or build_cnot_circuit()
    out = apply_transfer(gate_input_state(psi, spec, circuit.mode_set), circuit.transfer)
    kept, prob = post_select(out, circuit.success_pattern)
    if kept is None:
        raise FockError("gate output has no weight on the success pattern")
    return reduce_to_polarization(kept, ("control", "target")), prob


def postselected_operator(circuit: CnotCircuit | None = None) -> np.ndarray:
    """4x4 amplitude map on the one-photon-per-arm subspace (indistinguishable photons)."""
    circuit = circuit or build_cnot_circuit()
    m = circuit.mode_set
    op = np.zeros((4, 4), dtype=complex)
    for col, label in enumerate(LOGICAL_INPUTS):
        out = apply_transfer(gate_input_state(TwoQubitState.basis(label), QsSpec(), m), circuit.transfer)
        for row, out_label in enumerate(LOGICAL_INPUTS):
            occ = [0] * m.count
            occ[m.index("control", out_label[0], 0)] += 1
            occ[m.index("target", out_label[1], 0)] += 1
            op[row, col] = out.amplitude(occ)
    return op


def truth_table(spec: QsSpec = QsSpec()) -> np.ndarray:
    """Rows: logical input (VV, VH, HV, HH); columns: post-selected output probabilities."""
    table = np.empty((4, 4))
    for i, label in enumerate(LOGICAL_INPUTS):
        rho, _ = run_cnot(TwoQubitState.basis(label), spec)
        table[i] = np.real(np.diag(rho.matrix))
    return table


def bell_prep(which: str, spec: QsSpec = QsSpec()) -> DensityMatrix:
    control, target = BELL_INPUTS[which.lower()]
    rho, _ = run_cnot(TwoQubitState.product(control, target), spec)
    return rho
