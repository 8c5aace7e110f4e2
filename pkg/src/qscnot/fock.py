"""Few-photon bosonic states and linear-optical mode transfers.

A mode is a (spatial port, polarization, internal index) triple.  The internal
index is a two-valued label that makes photons partially distinguishable; no
element acts on it.

Transfer convention: a single-photon amplitude vector evolves as ``v -> T @ v``,
i.e. each creation operator is rewritten as ``a_i^dag -> sum_j T[j, i] b_j^dag``.
Beam splitters use the symmetric convention (factor ``i`` on reflection).
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

MAX_PHOTONS = 4
MAX_MODES = 16
PRUNE = 1e-14
EMPTY_PROBABILITY = 1e-15

POLARIZATIONS = ("H", "V")
# qubit basis for the reduced polarization state: logical 0 == V, 1 == H
QUBIT_POL = ("V", "H")
TWO_QUBIT_BASIS = ("VV", "VH", "HV", "HH")

Label = tuple[str, str, int]


class FockError(ValueError):
    """Invalid Fock-space input (bad mode set, size cap exceeded, mismatched dimensions)."""


@dataclass(frozen=True)
class ModeSet:
    labels: tuple[Label, ...]

    def __post_init__(self):
        labels = tuple((str(p), str(s), int(k)) for p, s, k in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise FockError("mode labels must be unique")
        if len(labels) > MAX_MODES:
            raise FockError(f"{len(labels)} modes exceeds the cap of {MAX_MODES}")
        for _, pol, internal in labels:
            if pol not in POLARIZATIONS:
                raise FockError(f"polarization must be H or V, got {pol!r}")
            if internal not in (0, 1):
                raise FockError(f"internal index must be 0 or 1, got {internal}")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def product(cls, ports: Sequence[str], internals: Sequence[int] = (0, 1)) -> "ModeSet":
        """All (port, pol, internal) combinations, port-major then H/V then internal."""
        return cls(tuple((p, s, k) for p in ports for s in POLARIZATIONS for k in internals))

    @property
    def count(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def ports(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(p for p, _, _ in self.labels))

    def index(self, port: str, pol: str, internal: int = 0) -> int:
        try:
            return self._index[(port, pol, internal)]
        except KeyError:
            raise FockError(f"no mode {(port, pol, internal)!r}") from None

    def port_modes(self, port: str) -> list[int]:
        return [i for i, (p, _, _) in enumerate(self.labels) if p == port]


@dataclass(frozen=True)
class ModeTransfer:
    """Complex mode matrix; ``unitary`` is verified to 1e-12 when set."""

    matrix: np.ndarray
    unitary: bool = True
    modes: ModeSet | None = field(default=None, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise FockError(f"transfer must be square, got shape {m.shape}")
        if self.modes is not None and self.modes.count != m.shape[0]:
            raise FockError("transfer dimension does not match its mode set")
        if self.unitary and not np.allclose(m.conj().T @ m, np.eye(len(m)), atol=1e-12, rtol=0):
            raise FockError("matrix flagged unitary is not unitary to 1e-12")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def H(self) -> "ModeTransfer":
        return ModeTransfer(self.matrix.conj().T, self.unitary, self.modes)


@dataclass(frozen=True)
class PureState:
    """Superposition of occupation vectors over ``modes`` (may be unnormalized)."""

    modes: ModeSet
    terms: Mapping[tuple[int, ...], complex]

    def __post_init__(self):
        clean: dict[tuple[int, ...], complex] = {}
        n_photons = None
        for occ, amp in self.terms.items():
            occ = tuple(int(x) for x in occ)
            if len(occ) != self.modes.count:
                raise FockError("occupation vector length does not match mode count")
            if min(occ) < 0:
                raise FockError("negative occupation")
            if n_photons is None:
                n_photons = sum(occ)
            elif sum(occ) != n_photons:
                raise FockError("terms carry different photon numbers")
            clean[occ] = clean.get(occ, 0j) + complex(amp)
        if n_photons is not None and n_photons > MAX_PHOTONS:
            raise FockError(f"{n_photons} photons exceeds the cap of {MAX_PHOTONS}")
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_n", n_photons or 0)

    @classmethod
    def from_modes(cls, modes: ModeSet, *creations: Iterable[tuple[int, complex]]) -> "PureState":
        """Apply a product of creation-operator linear combinations to vacuum.

        Each argument is an iterable of ``(mode index, coefficient)`` pairs, one
        argument per photon.
        """
        terms: dict[tuple[int, ...], complex] = {}
        for combo in itertools.product(*[list(c) for c in creations]):
            occ = [0] * modes.count
            coef = 1 + 0j
            for mode, c in combo:
                occ[mode] += 1
                coef *= c
            coef *= math.sqrt(math.prod(math.factorial(n) for n in occ))
            key = tuple(occ)
            terms[key] = terms.get(key, 0j) + coef
        return cls(modes, {k: v for k, v in terms.items() if abs(v) > PRUNE})

    @property
    def photon_number(self) -> int:
        return self._n

    def norm(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.terms.values()))

    def normalized(self) -> "PureState":
        n = math.sqrt(self.norm())
        if n == 0:
            raise FockError("cannot normalize the zero state")
        return PureState(self.modes, {k: v / n for k, v in self.terms.items()})

    def amplitude(self, occ: Sequence[int]) -> complex:
        return self.terms.get(tuple(occ), 0j)

    def overlap(self, other: "PureState") -> complex:
        """<self|other>"""
        return sum(np.conj(a) * other.terms.get(k, 0j) for k, a in self.terms.items())


def _check_unit_interval(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise FockError(f"{name} must lie in [0, 1], got {value}")
    return value


def beam_splitter(reflectivity: float) -> ModeTransfer:
    """Symmetric 2x2 beam splitter with power reflectivity ``reflectivity``."""
    r = _check_unit_interval("reflectivity", reflectivity)
    t, s = math.sqrt(1.0 - r), math.sqrt(r)
    return ModeTransfer(np.array([[t, 1j * s], [1j * s, t]]))


def waveplate(kind: str, angle: float) -> ModeTransfer:
    """Jones matrix on (H, V) of a half- or quarter-wave plate with fast axis at ``angle``.

    HWP(theta) = [[cos 2t, sin 2t], [sin 2t, -cos 2t]]; the QWP carries the same
    global-phase convention, so QWP(theta) @ QWP(theta) == HWP(theta).
    """
    kind = kind.upper()
    if kind not in ("HWP", "QWP"):
        raise FockError(f"waveplate kind must be HWP or QWP, got {kind!r}")
    retardance = math.pi if kind == "HWP" else math.pi / 2
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, s], [-s, c]])
    core = np.diag([1.0, np.exp(1j * retardance)])
    return ModeTransfer(rot.T @ core @ rot)


def ppbs(r_h: float, r_v: float) -> ModeTransfer:
    """Partially polarizing beam splitter on two ports.

    Element modes are ordered (a H, b H, a V, b V) so the matrix is
    block-diagonal: ``beam_splitter(r_h)`` on the H pair, ``beam_splitter(r_v)``
    on the V pair.
    """
    m = np.zeros((4, 4), dtype=complex)
    m[:2, :2] = beam_splitter(r_h).matrix
    m[2:, 2:] = beam_splitter(r_v).matrix
    return ModeTransfer(m)


def identity(n: int) -> ModeTransfer:
    return ModeTransfer(np.eye(n))


def embed(element: ModeTransfer, mapping: Mapping[int, int] | Sequence[int], total: ModeSet | int) -> ModeTransfer:
    """Place ``element`` on the global modes named by ``mapping``; identity elsewhere."""
    n = total.count if isinstance(total, ModeSet) else int(total)
    if not isinstance(mapping, Mapping):
        mapping = dict(enumerate(mapping))
    if sorted(mapping) != list(range(element.dim)):
        raise FockError("mapping must cover every element mode exactly once")
    targets = [mapping[k] for k in range(element.dim)]
    if len(set(targets)) != len(targets):
        raise FockError("mapping is not injective")
    if any(not 0 <= g < n for g in targets):
        raise FockError("mapping target out of range")
    m = np.eye(n, dtype=complex)
    idx = np.array(targets)
    m[np.ix_(idx, idx)] = element.matrix
    return ModeTransfer(m, element.unitary, total if isinstance(total, ModeSet) else None)


def compose(a: ModeTransfer, b: ModeTransfer) -> ModeTransfer:
    """``b`` after ``a``."""
    if a.dim != b.dim:
        raise FockError(f"cannot compose transfers of dimension {a.dim} and {b.dim}")
    if a.modes is not None and b.modes is not None and a.modes != b.modes:
        raise FockError("transfers live on different mode sets")
    return ModeTransfer(b.matrix @ a.matrix, a.unitary and b.unitary, a.modes or b.modes)


def chain(*transfers: ModeTransfer) -> ModeTransfer:
    """Compose left to right: the first argument acts first."""
    out = transfers[0]
    for t in transfers[1:]:
        out = compose(out, t)
    return out


def apply_transfer(state: PureState, t: ModeTransfer) -> PureState:
    if state.photon_number < 1:
        raise FockError("state must carry at least one photon")
    if t.dim != state.modes.count:
        raise FockError(f"transfer dimension {t.dim} does not match {state.modes.count} modes")
    m = t.matrix
    columns = [[(j, m[j, i]) for j in np.flatnonzero(np.abs(m[:, i]) > PRUNE)] for i in range(t.dim)]
    n_modes = t.dim
    out: dict[tuple[int, ...], complex] = {}
    for occ, amp in state.terms.items():
        photons = [i for i, n in enumerate(occ) for _ in range(n)]
        scale = amp / math.sqrt(math.prod(math.factorial(n) for n in occ))
        for combo in itertools.product(*(columns[i] for i in photons)):
            new = [0] * n_modes
            coef = scale
            for j, c in combo:
                new[j] += 1
                coef *= c
            key = tuple(new)
            out[key] = out.get(key, 0j) + coef
    terms = {}
    for key, coef in out.items():
        coef *= math.sqrt(math.prod(math.factorial(n) for n in key))
        if abs(coef) > PRUNE:
            terms[key] = coef
    return PureState(state.modes, terms)


def post_select(state: PureState, pattern: Mapping[str, int]) -> tuple[PureState | None, float]:
    """Keep terms whose per-port photon counts match ``pattern``.

    Ports absent from ``pattern`` are unconstrained.  Returns the renormalized
    kept state (``None`` when its probability is below 1e-15) and the kept
    probability relative to the input norm.
    """
    if not pattern:
        raise FockError("post-selection pattern is empty")
    groups = {port: state.modes.port_modes(port) for port in pattern}
    for port, idx in groups.items():
        if not idx:
            raise FockError(f"unknown port {port!r}")
    kept = {
        occ: amp
        for occ, amp in state.terms.items()
        if all(sum(occ[i] for i in groups[p]) == want for p, want in pattern.items())
    }
    total = state.norm()
    prob = sum(abs(a) ** 2 for a in kept.values()) / total if total > 0 else 0.0
    if prob < EMPTY_PROBABILITY:
        return None, float(prob)
    return PureState(state.modes, kept).normalized(), float(prob)


@dataclass(frozen=True)
class DensityMatrix:
    """Two-qubit (or general) density operator; invariants checked on construction."""

    matrix: np.ndarray
    basis: tuple[str, ...] = TWO_QUBIT_BASIS

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise FockError("density matrix must be square")
        if not np.allclose(m, m.conj().T, atol=1e-10, rtol=0):
            raise FockError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1) > 1e-10:
            raise FockError(f"density matrix trace is {np.trace(m).real}, expected 1")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise FockError("density matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


def polarization_amplitudes(state: PureState, ports: tuple[str, str]) -> np.ndarray:
    """Tensor ``psi[q1, k1, q2, k2]`` for one photon in each port (qubit q, internal k)."""
    p1, p2 = ports
    labels = state.modes.labels
    psi = np.zeros((2, 2, 2, 2), dtype=complex)
    for occ, amp in state.terms.items():
        occupied = [(labels[i], n) for i, n in enumerate(occ) if n]
        if len(occupied) != 2 or any(n != 1 for _, n in occupied):
            raise FockError("reduction needs exactly one photon in each named port")
        by_port = {lab[0]: lab for lab, _ in occupied}
        if set(by_port) != {p1, p2}:
            raise FockError("reduction needs exactly one photon in each named port")
        _, s1, k1 = by_port[p1]
        _, s2, k2 = by_port[p2]
        psi[QUBIT_POL.index(s1), k1, QUBIT_POL.index(s2), k2] += amp
    return psi


def reduce_to_polarization(state: PureState, ports: tuple[str, str]) -> DensityMatrix:
    """Trace out the internal indices, leaving a two-qubit polarization state.

    Basis order is (VV, VH, HV, HH) with the first letter for ``ports[0]``.
    """
    psi = polarization_amplitudes(state, ports)
    rho = np.einsum("akbl,ckdl->abcd", psi, psi.conj()).reshape(4, 4)
    tr = np.trace(rho).real
    if tr <= 0:
        raise FockError("state has no weight on the named ports")
    rho = rho / tr
    return DensityMatrix(0.5 * (rho + rho.conj().T))
