"""Heralded coincidence counting with multi-pair emission, Raman noise and dark counts.

Detector 1 (the herald) sits behind the control-arm analyzer, detector 2
(the gated detector) behind the target-arm analyzer.  Per gate window the
source emits ``n`` pairs and a single pair is routed coherently through the
gate.  Multi-pair windows depend on ``multi_pair_mode``:

* ``"exact"`` (default): two-pair windows use the full four-photon Fock
  evolution; beyond the four-photon cap, pairs are mutually incoherent and
  each pair keeps its own two-photon interference.
* ``"incoherent"``: every photon of a multi-pair window is routed
  independently with its single-photon probabilities.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .analyzer import AnalyzerSetting
from .fock import ModeSet, ModeTransfer, PureState, apply_transfer, chain, embed
from .gates import CnotCircuit, TwoQubitState, gate_input_state, QsSpec
from .fock import FockError

KDIM = _kernels.KDIM
MAX_PAIRS = _kernels.MAX_PAIRS
COUNT_LIMIT = 2**63 - 1


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    dark_prob: float
    name: str = "detector"

    def __post_init__(self):
        for attr in ("efficiency", "dark_prob"):
            v = getattr(self, attr)
            if not 0.0 <= v <= 1.0:
                raise DetectionError(f"{self.name}: {attr} must lie in [0, 1], got {v}")

    @classmethod
    def sspd(cls) -> "DetectorModel":
        return cls(0.01, 3e-6, "SSPD")

    @classmethod
    def apd(cls) -> "DetectorModel":
        return cls(0.20, 3e-3, "APD")


@dataclass(frozen=True)
class SourceModel:
    """Pair source.  ``distribution`` is thermal, poisson, or fixed (exactly one pair
    whenever ``mean_pairs`` > 0, for noise-free calibration runs)."""

    mean_pairs: float = 0.15
    overlap: float = math.sqrt(0.94)
    raman_prob: float = 0.0
    distribution: str = "thermal"

    def __post_init__(self):
        if self.mean_pairs < 0:
            raise DetectionError("mean_pairs must be non-negative")
        if not 0.0 <= self.raman_prob <= 1.0:
            raise DetectionError("raman_prob must lie in [0, 1]")
        if self.distribution not in ("thermal", "poisson", "fixed"):
            raise DetectionError(f"unknown pair distribution {self.distribution!r}")
        object.__setattr__(self, "overlap", float(min(1.0, max(0.0, self.overlap))))

    def pair_probabilities(self, n_max: int = MAX_PAIRS) -> np.ndarray:
        """P(n) for n = 0..n_max with the tail beyond n_max folded into n_max."""
        mu = self.mean_pairs
        n = np.arange(n_max + 1)
        if mu == 0:
            p = (n == 0).astype(float)
        elif self.distribution == "fixed":
            p = (n == 1).astype(float)
        elif self.distribution == "thermal":
            p = mu**n / (1 + mu) ** (n + 1)
        else:
            p = np.exp(-mu + n * math.log(mu) - np.array([math.lgamma(k + 1) for k in n]))
        p[-1] += max(0.0, 1.0 - p.sum())
        return p

    def multi_pair_fraction(self) -> float:
        """Fraction of pair-emitting windows that carry two or more pairs (untruncated)."""
        mu = self.mean_pairs
        if mu == 0 or self.distribution == "fixed":
            return 0.0
        if self.distribution == "thermal":
            return mu / (1 + mu)
        p0, p1 = math.exp(-mu), mu * math.exp(-mu)
        return (1 - p0 - p1) / (1 - p0)


@dataclass(frozen=True)
class RunConfig:
    n_gates: int
    seed: int
    settings: tuple[AnalyzerSetting, ...]
    gate_period_ns: float = 20.0
    multi_pair_mode: str = "exact"
    workers: int = 1
    backend: str | None = None

    def __post_init__(self):
        if self.n_gates < 1:
            raise DetectionError("n_gates must be at least 1")
        if self.n_gates > COUNT_LIMIT:
            raise DetectionError("n_gates overflows the count fields")
        if self.multi_pair_mode not in ("incoherent", "exact"):
            raise DetectionError(f"unknown multi_pair_mode {self.multi_pair_mode!r}")
        object.__setattr__(self, "settings", tuple(self.settings))


@dataclass(frozen=True)
class CountRecord:
    setting: AnalyzerSetting
    total: int
    accidental: int
    singles1: int
    singles2: int
    n_gates: int = 0

    def __post_init__(self):
        for name in ("total", "accidental", "singles1", "singles2"):
            v = getattr(self, name)
            if v < 0:
                raise DetectionError(f"{name} count is negative")
            if v > COUNT_LIMIT:
                raise DetectionError(f"{name} count overflows")

    @property
    def setting_id(self) -> str:
        return self.setting.id


def sample_pair_count(source: SourceModel, rng: np.random.Generator, size=None):
    """Pairs per gate window (untruncated thermal or Poisson law)."""
    mu = source.mean_pairs
    if mu == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if source.distribution == "fixed":
        return 1 if size is None else np.ones(size, dtype=np.int64)
    if source.distribution == "thermal":
        out = rng.geometric(1.0 / (1.0 + mu), size=size) - 1
    else:
        out = rng.poisson(mu, size=size)
    return int(out) if size is None else out


def subtract_accidentals(record: CountRecord) -> float:
    return float(record.total - record.accidental)


@dataclass(frozen=True)
class WindowModel:
    """Everything the window kernel needs for one analyzer setting.

    ``exact[n]`` is the joint distribution of photons reaching (detector 1,
    detector 2) for coherently routed ``n``-pair windows.  For larger ``n``,
    either each pair independently follows ``exact[1]`` (``pair_level``) or each
    photon independently reaches detector 1 / detector 2 with ``route_c``
    (control-input photons) or ``route_t`` (target-input photons).
    """

    pair_probs: np.ndarray
    exact: np.ndarray
    pair_level: bool
    route_c: tuple[float, float]
    route_t: tuple[float, float]
    background1: float
    background2: float
    efficiency1: float
    efficiency2: float

    @property
    def n_exact(self) -> int:
        return self.exact.shape[0] - 1

    def fire_probs(self, which: int) -> np.ndarray:
        b, eta = (self.background1, self.efficiency1) if which == 1 else (self.background2, self.efficiency2)
        k = np.arange(2 * MAX_PAIRS + 1)
        return 1.0 - (1.0 - b) * (1.0 - eta) ** k

    def joint(self, n: int) -> np.ndarray:
        """P(k1, k2 | n pairs), shape (2n + 1, 2n + 1)."""
        size = 2 * n + 1
        out = np.zeros((size, size))
        if n == 0:
            out[0, 0] = 1.0
            return out
        if n <= self.n_exact:
            e = self.exact[n]
            out[: min(size, KDIM), : min(size, KDIM)] = e[:size, :size]
            return out
        out[0, 0] = 1.0
        if self.pair_level:
            one = self.exact[1][:3, :3]
            for _ in range(n):
                new = np.zeros_like(out)
                for a in range(3):
                    for b in range(3):
                        if one[a, b]:
                            new[a:, b:] += one[a, b] * out[: size - a, : size - b]
                out = new
            return out
        for p in range(2 * n):
            a1, a2 = self.route_c if p < n else self.route_t
            new = out * (1 - a1 - a2)
            new[1:, :] += out[:-1, :] * a1
            new[:, 1:] += out[:, :-1] * a2
            out = new
        return out

    def expected(self) -> tuple[float, float, float]:
        """(P(both fire in one window), P(detector 1 fires), P(detector 2 fires))."""
        f1, f2 = self.fire_probs(1), self.fire_probs(2)
        both = m1 = m2 = 0.0
        for n, pn in enumerate(self.pair_probs):
            if pn == 0:
                continue
            j = self.joint(n)
            g1, g2 = f1[: j.shape[0]], f2[: j.shape[1]]
            both += pn * float(g1 @ j @ g2)
            m1 += pn * float(g1 @ j.sum(axis=1))
            m2 += pn * float(j.sum(axis=0) @ g2)
        return both, m1, m2

    def expected_counts(self, n_gates: int) -> tuple[float, float]:
        """Expected (total, accidental) coincidences."""
        both, m1, m2 = self.expected()
        return n_gates * both, n_gates * m1 * m2

    def kernel_tables(self):
        cdf = np.cumsum(self.pair_probs)
        cdf[-1] = 1.0
        # row 0 (no pairs) always yields the (0, 0) outcome
        exact = np.ones((self.n_exact + 1, KDIM * KDIM))
        for n in range(1, self.n_exact + 1):
            c = np.cumsum(self.exact[n].reshape(-1))
            c[-1] = 1.0
            exact[n] = c
        route_c = np.array([self.route_c[0], self.route_c[0] + self.route_c[1]])
        route_t = np.array([self.route_t[0], self.route_t[0] + self.route_t[1]])
        return (cdf, exact, self.n_exact, self.pair_level, route_c, route_t,
                self.fire_probs(1), self.fire_probs(2))


def background_prob(det: DetectorModel, raman_prob: float) -> float:
    """Dark count or a detected unpolarized Raman photon (half passes any analyzer)."""
    return 1.0 - (1.0 - det.dark_prob) * (1.0 - 0.5 * raman_prob * det.efficiency)


def analyzer_transfer(setting: AnalyzerSetting, modes: ModeSet) -> ModeTransfer:
    out = np.eye(modes.count, dtype=complex)
    for arm, port in enumerate(("control", "target")):
        jones = ModeTransfer(setting.arm_jones(arm))
        for k in (0, 1):
            idx = [modes.index(port, "H", k), modes.index(port, "V", k)]
            out = embed(jones, idx, modes).matrix @ out
    return ModeTransfer(out, True, modes)


def _detector_modes(modes: ModeSet):
    d1 = [modes.index("control", "H", k) for k in (0, 1)]
    d2 = [modes.index("target", "H", k) for k in (0, 1)]
    return d1, d2


def _joint_from_state(state: PureState, d1, d2) -> np.ndarray:
    out = np.zeros((KDIM, KDIM))
    for occ, amp in state.terms.items():
        out[sum(occ[i] for i in d1), sum(occ[i] for i in d2)] += abs(amp) ** 2
    return out / out.sum()


def _pair_power_state(psi: TwoQubitState, overlap: float, modes: ModeSet, n: int) -> PureState:
    """(pair creation operator)^n |0>, normalized; pair operator as in ``gate_input_state``."""
    pair = gate_input_state(psi, QsSpec(overlap=overlap), modes)
    ops = []
    for occ, amp in pair.terms.items():
        idx = [i for i, c in enumerate(occ) for _ in range(c)]
        ops.append((idx, amp / math.sqrt(math.prod(math.factorial(c) for c in occ))))
    terms: dict[tuple[int, ...], complex] = {}

    def expand(depth, photons, coef):
        if depth == n:
            occ = [0] * modes.count
            for i in photons:
                occ[i] += 1
            key = tuple(occ)
            terms[key] = terms.get(key, 0j) + coef * math.sqrt(math.prod(math.factorial(c) for c in occ))
            return
        for idx, c in ops:
            expand(depth + 1, photons + idx, coef * c)

    expand(0, [], 1 + 0j)
    return PureState(modes, {k: v for k, v in terms.items() if abs(v) > 1e-14}).normalized()


def _single_photon_routing(transfer: np.ndarray, rho_pol: np.ndarray, port: str, modes: ModeSet, d1, d2):
    """Probabilities that one photon with polarization state ``rho_pol`` (V, H basis)
    entering ``port`` reaches detector 1 and detector 2."""
    cols = [modes.index(port, "V", 0), modes.index(port, "H", 0)]
    t = transfer[:, cols]
    out = t @ rho_pol @ t.conj().T
    diag = np.real(np.diag(out))
    return float(diag[d1].sum()), float(diag[d2].sum())


def reduced_qubits(psi: TwoQubitState) -> tuple[np.ndarray, np.ndarray]:
    a = psi.amplitudes.reshape(2, 2)
    return a @ a.conj().T, a.T @ a.conj()


def window_model(
    circuit: CnotCircuit,
    psi: TwoQubitState,
    source: SourceModel,
    herald: DetectorModel,
    gated: DetectorModel,
    setting: AnalyzerSetting,
    multi_pair_mode: str = "exact",
) -> WindowModel:
    modes = circuit.mode_set
    full = chain(circuit.transfer, analyzer_transfer(setting, modes))
    d1, d2 = _detector_modes(modes)
    n_exact = 2 if multi_pair_mode == "exact" else 1
    exact = np.zeros((n_exact + 1, KDIM, KDIM))
    exact[0, 0, 0] = 1.0
    for n in range(1, n_exact + 1):
        state = _pair_power_state(psi, source.overlap, modes, n)
        exact[n] = _joint_from_state(apply_transfer(state, full), d1, d2)
    rho_c, rho_t = reduced_qubits(psi)
    return WindowModel(
        pair_probs=source.pair_probabilities(),
        exact=exact,
        pair_level=multi_pair_mode == "exact",
        route_c=_single_photon_routing(full.matrix, rho_c, "control", modes, d1, d2),
        route_t=_single_photon_routing(full.matrix, rho_t, "target", modes, d1, d2),
        background1=background_prob(herald, source.raman_prob),
        background2=background_prob(gated, source.raman_prob),
        efficiency1=herald.efficiency,
        efficiency2=gated.efficiency,
    )


def count_setting(model: WindowModel, setting: AnalyzerSetting, stream: int, cfg: RunConfig) -> CountRecord:
    key = _kernels.stream_key(cfg.seed, stream)
    total, acc, s1, s2 = _kernels.count_windows(key, 0, cfg.n_gates, cfg.n_gates, model.kernel_tables(), cfg.backend)
    return CountRecord(setting, total, acc, s1, s2, cfg.n_gates)


def simulate_counts(
    circuit: CnotCircuit,
    psi: TwoQubitState,
    source: SourceModel,
    herald: DetectorModel,
    gated: DetectorModel,
    cfg: RunConfig,
    stream_offset: int = 0,
    streams=None,
) -> list[CountRecord]:
    """One CountRecord per analyzer setting, in setting order.

    Setting ``i`` draws from the random stream ``streams[i]`` if given, else
    ``stream_offset + i``, so distinct gate inputs use distinct streams.
    """
    if not cfg.settings:
        raise DetectionError("no analyzer settings given")
    if not all(isinstance(s, AnalyzerSetting) for s in cfg.settings):
        raise DetectionError("invalid analyzer setting")
    try:
        models = [window_model(circuit, psi, source, herald, gated, s, cfg.multi_pair_mode) for s in cfg.settings]
    except FockError as exc:
        raise DetectionError(str(exc)) from exc
    if streams is None:
        streams = [stream_offset + i for i in range(len(cfg.settings))]
    if len(streams) != len(cfg.settings):
        raise DetectionError("need one stream per analyzer setting")
    jobs = [(m, s, int(k), cfg) for k, m, s in zip(streams, models, cfg.settings)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(lambda job: count_setting(*job), jobs))
    return [count_setting(*job) for job in jobs]
