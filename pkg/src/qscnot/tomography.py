"""State and restricted process tomography, entanglement metrics, multi-pair subtraction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .analyzer import AnalyzerSetting, analyzer_projector, standard_settings
from .detection import CountRecord, DetectorModel, SourceModel, subtract_accidentals
from .fock import DensityMatrix
from .gates import IDEAL_CNOT, CnotCircuit, TwoQubitState, build_cnot_circuit

log = logging.getLogger(__name__)

__all__ = [
    "AnalyzerSetting", "analyzer_projector", "standard_settings",
    "TomoDataset", "MleResult", "mle_state", "fidelity", "tangle", "concurrence", "linear_entropy",
    "Metrics", "metrics", "ProcessMatrix", "ProcessFit", "fit_pure_process", "process_fidelity",
    "multipair_correct", "predict_counts", "truth_table_from_datasets",
]

SIGMA_Y2 = np.kron([[0, -1j], [1j, 0]], [[0, -1j], [1j, 0]])


class TomographyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class TomoDataset:
    """Counts for one gate input over a list of analyzer settings.

    ``counts`` are accidental-subtracted coincidences and may be negative.
    ``weights`` are relative per-setting normalizations (pump-power drift).
    """

    settings: tuple[AnalyzerSetting, ...]
    counts: np.ndarray
    totals: np.ndarray
    accidentals: np.ndarray
    weights: np.ndarray
    input_state: TwoQubitState | None = None
    n_gates: int = 0
    label: str = ""

    def __post_init__(self):
        n = len(self.settings)
        object.__setattr__(self, "settings", tuple(self.settings))
        for name in ("counts", "totals", "accidentals", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (n,):
                raise TomographyError(f"{name} must have one entry per setting")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, records: list[CountRecord], input_state=None, label="", weights=None) -> "TomoDataset":
        counts = [subtract_accidentals(r) for r in records]
        return cls(
            settings=tuple(r.setting for r in records),
            counts=np.array(counts),
            totals=np.array([r.total for r in records], dtype=float),
            accidentals=np.array([r.accidental for r in records], dtype=float),
            weights=np.ones(len(records)) if weights is None else np.asarray(weights, dtype=float),
            input_state=input_state,
            n_gates=max((r.n_gates for r in records), default=0),
            label=label,
        )

    @classmethod
    def from_expected(cls, settings, expected, input_state=None, n_gates=0, label="") -> "TomoDataset":
        """Noise-free dataset whose counts equal ``expected``; variances from the counts."""
        expected = np.asarray(expected, dtype=float)
        return cls(tuple(settings), expected, np.maximum(expected, 0.0), np.zeros_like(expected),
                   np.ones(len(expected)), input_state, n_gates, label)

    @property
    def variances(self) -> np.ndarray:
        return np.maximum(self.totals + self.accidentals, 1.0)

    def with_counts(self, counts) -> "TomoDataset":
        return replace(self, counts=np.asarray(counts, dtype=float))


# -- metrics -----------------------------------------------------------------

def _mat(rho) -> np.ndarray:
    return np.asarray(rho, dtype=complex)


def fidelity(rho, target) -> float:
    """<target|rho|target> for a normalized pure target."""
    t = np.asarray(target, dtype=complex).reshape(-1)
    if abs(np.vdot(t, t).real - 1) > 1e-9:
        raise TomographyError("fidelity target must be normalized")
    return float(np.real(np.vdot(t, _mat(rho) @ t)))


def concurrence(rho) -> float:
    r = _mat(rho)
    flipped = SIGMA_Y2 @ r.conj() @ SIGMA_Y2
    ev = np.linalg.eigvals(r @ flipped)
    lam = np.sort(np.sqrt(np.clip(ev.real, 0.0, None)))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def tangle(rho) -> float:
    return concurrence(rho) ** 2


def linear_entropy(rho) -> float:
    """(4/3)(1 - Tr rho^2) for a two-qubit state."""
    r = _mat(rho)
    return float(4.0 / 3.0 * (1.0 - np.real(np.trace(r @ r))))


@dataclass(frozen=True)
class Metrics:
    fidelity: float
    tangle: float
    linear_entropy: float


def metrics(rho, target) -> Metrics:
    return Metrics(fidelity(rho, target), tangle(rho), linear_entropy(rho))


# -- maximum-likelihood state estimation -------------------------------------

@dataclass
class MleResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    model: str
    scale: float
    message: str = ""

    def metadata(self) -> dict:
        return {
            "likelihood_model": self.model,
            "iterations": self.iterations,
            "converged": self.converged,
            "neg_log_likelihood": self.log_likelihood,
            "scale": self.scale,
        }


def _cholesky_params(rho: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, 1e-6, None)
    rho = (evecs * evals) @ evecs.conj().T
    rho /= np.trace(rho).real
    # rho = T^dag T with T upper triangular <=> L = T^dag lower triangular
    lower = np.linalg.cholesky(rho)
    t = lower.conj().T
    return np.concatenate([t[np.triu_indices(4)].real, t[np.triu_indices(4, 1)].imag])


def _t_from_params(x: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(4)
    iu1 = np.triu_indices(4, 1)
    t = np.zeros((4, 4), dtype=complex)
    t[iu] = x[:10]
    t[iu1] += 1j * x[10:]
    return t


def _grad_from_w(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    # df = 2 Re Tr(W T^dag dT) for A = T^dag T
    g = 2 * (w @ t.conj().T).T
    iu = np.triu_indices(4)
    iu1 = np.triu_indices(4, 1)
    return np.concatenate([g[iu].real, -g[iu1].imag])


def linear_inversion(projectors: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Least-squares rho from p_v = Tr(P_v rho), projected to a physical state."""
    a = projectors.reshape(len(projectors), -1).conj()
    vec, *_ = np.linalg.lstsq(a, freqs.astype(complex), rcond=None)
    rho = vec.reshape(4, 4)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    rho = rho / tr if tr > 0 else np.eye(4) / 4
    evals, evecs = np.linalg.eigh(rho)
    evals = _project_simplex(evals)
    return (evecs * evals) @ evecs.conj().T


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0)


def _minimize(fun, x0, tol: float, max_iter: int, restarts: int = 3):
    """L-BFGS-B with analytic gradient.

    Returns (result, converged, iterations).  A stop on line-search failure is
    common at the precision floor; the run is restarted from its endpoint and
    counts as converged once a restart changes the objective by less than
    ``tol`` (relative).
    """
    opts = {"maxiter": max_iter, "ftol": tol, "gtol": 1e-12, "maxcor": 30}
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", options=opts)
    iterations = res.nit
    converged = bool(res.success)
    for _ in range(restarts):
        if converged or iterations >= max_iter:
            break
        again = minimize(fun, res.x, jac=True, method="L-BFGS-B", options=opts)
        iterations += again.nit
        change = abs(res.fun - again.fun) / max(abs(res.fun), abs(again.fun), 1.0)
        if again.fun <= res.fun:
            res = again
        converged = bool(again.success) or change < tol
    return res, converged, iterations


def mle_state(data: TomoDataset, model: str = "poisson", max_iter: int = 5000, tol: float = 1e-9) -> MleResult:
    """Maximum-likelihood two-qubit state, rho = T^dag T / Tr(T^dag T).

    Expected counts are ``N * w_v * Tr(rho P_v)`` with the overall scale ``N``
    profiled out.  ``model`` is "poisson" or "gaussian" (variance total +
    accidental per setting).
    """
    projectors = np.array([analyzer_projector(s) for s in data.settings])
    if np.linalg.matrix_rank(projectors.reshape(len(projectors), -1), tol=1e-8) < 16:
        raise TomographyError("analyzer settings do not span the two-qubit operator space")
    if model not in ("poisson", "gaussian"):
        raise TomographyError(f"unknown likelihood model {model!r}")
    # negative corrected counts make the Poisson likelihood unbounded
    c = np.clip(data.counts, 0.0, None) if model == "poisson" else data.counts
    w = data.weights
    var = data.variances
    if np.sum(np.clip(c, 0, None)) <= 0:
        raise TomographyError("dataset carries no positive counts")

    def objective(x):
        t = _t_from_params(x)
        a = t.conj().T @ t
        tr = max(np.trace(a).real, 1e-300)
        p = np.einsum("vij,ji->v", projectors, a).real / tr
        p = np.clip(p, 1e-15, None)
        mu = w * p
        if model == "poisson":
            n = c.sum() / mu.sum()
            f = float(np.sum(n * mu - c * np.log(n * mu)))
            dfdp = -c / p + c.sum() * w / mu.sum()
        else:
            n = float(np.sum(c * mu / var) / np.sum(mu * mu / var))
            r = c - n * mu
            f = float(0.5 * np.sum(r * r / var))
            dfdp = -n * w * r / var
        wmat = np.einsum("v,vij->ij", dfdp, projectors - p[:, None, None] * np.eye(4)) / tr
        return f, _grad_from_w(wmat, t), n

    freqs = np.clip(c / w, 0, None)
    rho0 = linear_inversion(projectors, freqs / freqs.sum() * 4 if freqs.sum() > 0 else np.ones(len(c)))
    x0 = _cholesky_params(rho0)
    res, converged, iterations = _minimize(lambda x: objective(x)[:2], x0, tol, max_iter)
    t = _t_from_params(res.x)
    a = t.conj().T @ t
    rho = a / np.trace(a).real
    rho = 0.5 * (rho + rho.conj().T)
    if not converged:
        log.warning("state MLE did not converge: %s", res.message)
    return MleResult(DensityMatrix(rho), float(res.fun), iterations, converged, model,
                     float(objective(res.x)[2]), str(res.message))


# -- restricted (pure) process tomography ------------------------------------

# process input modes: control V, control H, target V, target H
# process output modes: control V, control H, target V, target H, dump1, dump2
PROCESS_INPUTS = (("control", "V"), ("control", "H"), ("target", "V"), ("target", "H"))
PROCESS_OUTPUTS = (("control", "V"), ("control", "H"), ("target", "V"), ("target", "H"),
                   ("dump1", "H"), ("dump2", "H"))


@dataclass(frozen=True)
class ProcessMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (6, 4):
            raise TomographyError(f"process matrix must be 6x4, got {m.shape}")
        if np.any(np.linalg.norm(m, axis=0) > 1 + 1e-9):
            raise TomographyError("process matrix column norm exceeds 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_circuit(cls, circuit: CnotCircuit | None = None) -> "ProcessMatrix":
        circuit = circuit or build_cnot_circuit()
        modes = circuit.mode_set
        t = circuit.transfer.matrix
        cols = [modes.index(p, s, 0) for p, s in PROCESS_INPUTS]
        rows = [modes.index(p, s, 0) for p, s in PROCESS_OUTPUTS]
        return cls(t[np.ix_(rows, cols)])

    def postselected(self) -> np.ndarray:
        return postselected_operator(self.matrix)


def postselected_operator(m: np.ndarray) -> np.ndarray:
    """Two-photon amplitude map (VV, VH, HV, HH) -> (VV, VH, HV, HH), one photon per arm."""
    m = np.asarray(m)
    a = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            ci, tj = i, 2 + j
            for p in range(2):
                for q in range(2):
                    co, to = p, 2 + q
                    a[2 * p + q, 2 * i + j] = m[co, ci] * m[to, tj] + m[co, tj] * m[to, ci]
    return a


def process_fidelity(m, ideal: np.ndarray = IDEAL_CNOT) -> float:
    """|Tr(A_ideal^dag A)|^2 / (Tr(A_ideal^dag A_ideal) Tr(A^dag A)) on the post-selected subspace.

    ``m`` is a ProcessMatrix (or 6x4 array), or directly a 4x4 post-selected operator.
    """
    if isinstance(m, ProcessMatrix):
        a = m.postselected()
    else:
        arr = np.asarray(m, dtype=complex)
        a = postselected_operator(arr) if arr.shape == (6, 4) else arr
    norm_a = np.trace(a.conj().T @ a).real
    if norm_a <= 0:
        raise TomographyError("post-selected operator has zero norm")
    ideal = np.asarray(ideal, dtype=complex)
    overlap = np.trace(ideal.conj().T @ a)
    return float(abs(overlap) ** 2 / (np.trace(ideal.conj().T @ ideal).real * norm_a))


def _routing(settings) -> np.ndarray:
    """Per-setting map from process rows to (detector 1, control rejected, detector 2,
    target rejected, dump1, dump2)."""
    r = np.zeros((len(settings), 6, 6), dtype=complex)
    for i, s in enumerate(settings):
        # process rows are (V, H) ordered; Jones matrices act on (H, V)
        r[i, 0:2, 0:2] = s.arm_jones(0)[:, ::-1]
        r[i, 2:4, 2:4] = s.arm_jones(1)[:, ::-1]
        r[i, 4, 4] = r[i, 5, 5] = 1.0
    return r


def _split_product(psi: TwoQubitState) -> tuple[np.ndarray, np.ndarray]:
    amps = psi.amplitudes.reshape(2, 2)
    uu, ss, vh = np.linalg.svd(amps)
    if ss[1] > 1e-9 * ss[0]:
        raise TomographyError("process prediction needs a product-state input")
    return uu[:, 0] * math.sqrt(ss[0]), vh[0] * math.sqrt(ss[0])


MULTI_PAIR_MODELS = ("exact", "pairs", "incoherent")


def _phi(pn: np.ndarray, alpha, beta, c2, model: str):
    """sum_n P(n) G_n and its partials in (alpha, beta, |c|^2).

    One pair: G1 = alpha beta + |c|^2.  ``exact``: two pairs from one pulse
    interfere, G2 = G1^2 + 2 alpha beta |c|^2, and larger n use G1^n.
    ``pairs``: G1^n.  ``incoherent``: every photon of a multi-pair window is
    routed alone, (alpha beta)^n.
    """
    g1 = alpha * beta + c2
    ab = alpha * beta
    val = pn[0] + pn[1] * g1
    d_g1 = pn[1] * np.ones_like(g1)
    d_ab = np.zeros_like(g1)
    d_c2 = np.zeros_like(g1)
    for n in range(2, len(pn)):
        if pn[n] == 0:
            continue
        if model == "incoherent":
            val = val + pn[n] * ab**n
            d_ab = d_ab + pn[n] * n * ab ** (n - 1)
        else:
            val = val + pn[n] * g1**n
            d_g1 = d_g1 + pn[n] * n * g1 ** (n - 1)
            if n == 2 and model == "exact":
                val = val + pn[2] * 2 * ab * c2
                d_ab = d_ab + pn[2] * 2 * c2
                d_c2 = d_c2 + pn[2] * 2 * ab
    d_ab = d_ab + d_g1
    d_c2 = d_c2 + d_g1
    return val, d_ab * beta, d_ab * alpha, d_c2


class _CountModel:
    """Expected accidental-subtracted coincidences as a function of a 6x4 process.

    The photon-number generating function of the detector modes only needs
    the detector amplitudes u (control photon) and v (target photon):
    with d = 1 - s on the two detector modes, alpha = 1 - sum d|u|^2,
    beta = 1 - sum d|v|^2 and c = -sum d conj(u) v (lost photons carry s = 1).
    No-click probabilities are q1 = (1-b1) phi(1-eta1, 1),
    q2 = (1-b2) phi(1, 1-eta2), q12 = (1-b1)(1-b2) phi(1-eta1, 1-eta2), and
    the expected corrected count is N (q12 - q1 q2).
    """

    def __init__(self, datasets, source, herald, gated, single_pairs_only=False, model="exact"):
        from .detection import background_prob

        if model not in MULTI_PAIR_MODELS:
            raise TomographyError(f"unknown multi-pair model {model!r}")
        self.model = model
        routing = np.concatenate([_routing(d.settings) for d in datasets])
        # only the two detector rows matter
        self.routing = routing[:, [0, 2], :]
        psi = [_split_product(d.input_state) for d in datasets]
        reps = [len(d.settings) for d in datasets]
        self.psi_c = np.repeat(np.array([p[0] for p in psi]), reps, axis=0)
        self.psi_t = np.repeat(np.array([p[1] for p in psi]), reps, axis=0)
        self.n_gates = np.repeat([float(d.n_gates) for d in datasets], reps)
        pn = source.pair_probabilities()
        if single_pairs_only:
            pn = pn.copy()
            pn[0] += pn[2:].sum()
            pn[2:] = 0
        self.pn = pn
        self.keep1 = 1 - background_prob(herald, source.raman_prob)
        self.keep2 = 1 - background_prob(gated, source.raman_prob)
        e1, e2 = herald.efficiency, gated.efficiency
        # detector-mode weights d = 1 - s for q1, q2 and q12
        self.d = np.array([[e1, 0.0], [0.0, e2], [e1, e2]])

    def __call__(self, m: np.ndarray, grad_out: np.ndarray | None = None):
        """Predictions, plus dF/dM (df = Re sum conj(g) dM) when ``grad_out`` holds dF/dprediction."""
        u = np.einsum("sij,jk,sk->si", self.routing, m[:, :2], self.psi_c)
        v = np.einsum("sij,jk,sk->si", self.routing, m[:, 2:], self.psi_t)
        d = self.d[:, None, :]
        alpha = 1 - np.sum(d * np.abs(u) ** 2, axis=-1)
        beta = 1 - np.sum(d * np.abs(v) ** 2, axis=-1)
        c = -np.sum(d * u.conj() * v, axis=-1)
        phi, p_a, p_b, p_c2 = _phi(self.pn, alpha, beta, np.abs(c) ** 2, self.model)
        q1 = self.keep1 * phi[0]
        q2 = self.keep2 * phi[1]
        q12 = self.keep1 * self.keep2 * phi[2]
        pred = self.n_gates * (q12 - q1 * q2)
        if grad_out is None:
            return pred
        w = grad_out * self.n_gates
        dphi = np.array([-w * self.keep1 * q2, -w * q1 * self.keep2, w * self.keep1 * self.keep2])
        ga, gb, gc2 = dphi * p_a, dphi * p_b, dphi * p_c2
        # complex gradients of alpha, beta, |c|^2 with respect to u and v
        gu = np.sum(ga[..., None] * (-2 * d * u) + gc2[..., None] * (-2 * d * v * c.conj()[..., None]), axis=0)
        gv = np.sum(gb[..., None] * (-2 * d * v) + gc2[..., None] * (-2 * d * u * c[..., None]), axis=0)
        back_u = np.einsum("sji,sj->si", self.routing.conj(), gu)
        back_v = np.einsum("sji,sj->si", self.routing.conj(), gv)
        grad = np.zeros((6, 4), dtype=complex)
        grad[:, :2] = np.einsum("si,sk->ik", back_u, self.psi_c.conj())
        grad[:, 2:] = np.einsum("si,sk->ik", back_v, self.psi_t.conj())
        return pred, grad


def predict_counts(
    m: np.ndarray,
    psi: TwoQubitState,
    settings,
    source: SourceModel,
    herald: DetectorModel,
    gated: DetectorModel,
    n_gates: int,
    single_pairs_only: bool = False,
    model: str = "exact",
) -> np.ndarray:
    """Expected accidental-subtracted coincidences predicted by a pure process ``m``.

    ``model`` selects how multi-pair windows are routed (see :func:`_phi`);
    ``single_pairs_only`` moves all multi-pair probability to the vacuum.
    Product-state inputs only.
    """
    data = TomoDataset(tuple(settings), np.zeros(len(settings)), np.zeros(len(settings)),
                       np.zeros(len(settings)), np.ones(len(settings)), psi, n_gates)
    return _CountModel([data], source, herald, gated, single_pairs_only, model)(np.asarray(m, dtype=complex))


def coincidence_probabilities(m: np.ndarray, psi: TwoQubitState, settings) -> np.ndarray:
    """Probability that one photon of a single pair reaches each detector, per setting."""
    psi_c, psi_t = _split_product(psi)
    r = _routing(settings)
    m = np.asarray(m)
    u = r @ (m[:, :2] @ psi_c)
    v = r @ (m[:, 2:] @ psi_t)
    return np.abs(u[:, 0] * v[:, 2] + u[:, 2] * v[:, 0]) ** 2


@dataclass
class ProcessFit:
    process: ProcessMatrix
    mean_residual: float
    rms_residual: float
    chi2: float
    converged: bool
    iterations: int
    starts: int
    seed: int
    scales: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)
    message: str = ""

    @property
    def fidelity(self) -> float:
        return process_fidelity(self.process)

    def metadata(self) -> dict:
        return {
            "likelihood_model": "gaussian, variance = total + accidental",
            "iterations": self.iterations,
            "converged": self.converged,
            "starts": self.starts,
            "seed": self.seed,
            "chi2": self.chi2,
            "mean_abs_residual_sigma": self.mean_residual,
            "rms_residual_sigma": self.rms_residual,
        }


def _pack(m: np.ndarray) -> np.ndarray:
    return np.concatenate([m.real.ravel(), m.imag.ravel()])


def _unpack(x: np.ndarray) -> np.ndarray:
    return (x[:24] + 1j * x[24:]).reshape(6, 4)


def _cap_columns(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=0)
    return m / np.maximum(norms, 1.0)


WALL = 1e6


def fit_pure_process(
    datasets: list[TomoDataset],
    source: SourceModel,
    herald: DetectorModel,
    gated: DetectorModel,
    starts: int = 5,
    seed: int = 0,
    max_iter: int = 5000,
    multi_pair: bool = True,
    fit_scales: bool = False,
    tol: float = 1e-9,
    model: str = "exact",
) -> ProcessFit:
    """Maximum-likelihood pure 6x4 mode-transfer matrix over several gate inputs.

    Predicted counts include the multi-pair contribution (routed according to
    ``model``) when ``multi_pair``; per-point variances are total + accidental counts.  With
    ``fit_scales`` every setting gets its own normalization factor (pump-power
    drift), profiled out in closed form.  Start 0 is the ideal circuit; the
    others perturb it with a fixed-seed RNG.
    """
    if not datasets:
        raise TomographyError("no datasets given")
    if any(d.input_state is None for d in datasets):
        raise TomographyError("process fitting needs each dataset's input state")
    counter = _CountModel(datasets, source, herald, gated, not multi_pair, model)
    counts = np.concatenate([d.counts for d in datasets])
    weights = np.concatenate([d.weights for d in datasets])
    sigma = np.sqrt(np.concatenate([d.variances for d in datasets]))

    groups = np.repeat(np.arange(len(datasets)), [len(d.settings) for d in datasets])

    def scales_for(pred):
        if not fit_scales:
            return np.ones(len(datasets))
        p = weights * pred / sigma
        c = counts / sigma
        num = np.bincount(groups, p * c, len(datasets))
        den = np.bincount(groups, p * p, len(datasets))
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)

    def residuals(pred, scales):
        return (counts - scales[groups] * weights * pred) / sigma

    def objective(x):
        m = _unpack(x)
        pred = counter(m)
        scales = scales_for(pred)
        r = residuals(pred, scales)
        # the profiled scales are stationary, so they drop out of the gradient
        _, g = counter(m, -r * scales[groups] * weights / sigma)
        norms = np.linalg.norm(m, axis=0)
        excess = np.clip(norms - 1.0, 0, None)
        g = g + 2 * WALL * m * (excess / np.maximum(norms, 1e-300))
        return 0.5 * float(r @ r) + WALL * float(excess @ excess), _pack(g)

    rng = np.random.default_rng(seed)
    ideal = ProcessMatrix.from_circuit().matrix
    best = None
    best_converged = False
    total_iter = 0
    for k in range(starts):
        m0 = ideal if k == 0 else _cap_columns(ideal + 0.1 * (rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))))
        res, converged, iterations = _minimize(objective, _pack(m0), tol, max_iter)
        total_iter += iterations
        if best is None or res.fun < best.fun:
            best, best_converged = res, converged
    m = _cap_columns(_unpack(best.x))
    pred = counter(m)
    scales = scales_for(pred)
    r = residuals(pred, scales)
    converged = best_converged
    if not converged:
        log.warning("process fit did not converge: %s", best.message)
    return ProcessFit(ProcessMatrix(m), float(np.mean(np.abs(r))), float(np.sqrt(np.mean(r * r))),
                      float(r @ r), converged, total_iter, starts, seed, scales, r, str(best.message))


def multipair_correct(
    dataset: TomoDataset,
    m: ProcessMatrix,
    source: SourceModel,
    herald: DetectorModel,
    gated: DetectorModel,
    scale: float = 1.0,
    method: str = "signal",
    model: str = "exact",
) -> TomoDataset:
    """Remove the predicted multi-pair and background contributions from ``dataset``.

    ``method="signal"`` replaces each count by the measured count minus
    everything the process ``m`` predicts beyond the genuine single-pair
    coincidences (one photon of the same pair at each detector).  This also
    removes the negative residual that accidental subtraction leaves on
    forbidden outputs.  ``method="excess"`` subtracts only the difference
    between the full-source prediction and a source whose multi-pair windows
    are empty.  Predictions are scaled by the dataset weights and ``scale``;
    ``model`` routes multi-pair windows as in :func:`predict_counts`.
    """
    if method not in ("signal", "excess"):
        raise TomographyError(f"unknown correction method {method!r}")
    if source.mean_pairs == 0:
        return dataset
    full = predict_counts(m.matrix, dataset.input_state, dataset.settings, source, herald, gated,
                          dataset.n_gates, model=model)
    if method == "excess":
        base = predict_counts(m.matrix, dataset.input_state, dataset.settings, source, herald, gated,
                              dataset.n_gates, single_pairs_only=True, model=model)
    else:
        p1 = source.pair_probabilities()[1]
        base = (dataset.n_gates * p1 * herald.efficiency * gated.efficiency
                * coincidence_probabilities(m.matrix, dataset.input_state, dataset.settings))
    return dataset.with_counts(dataset.counts - scale * dataset.weights * (full - base))


def truth_table_from_datasets(datasets: list[TomoDataset], clip: bool = True) -> np.ndarray:
    """Rows: one per dataset; columns: (VV, VH, HV, HH) outputs, normalized per row.

    Accidental-subtracted counts can fall below zero; with ``clip`` they count
    as zero before normalization.
    """
    order = ("VV", "VH", "HV", "HH")
    table = np.zeros((len(datasets), 4))
    for i, d in enumerate(datasets):
        by_id = {s.id: c for s, c in zip(d.settings, d.counts)}
        row = np.array([by_id[o] for o in order], dtype=float)
        if clip:
            row = np.clip(row, 0.0, None)
        if row.sum() <= 0:
            raise TomographyError(f"dataset {d.label or i} has no positive logical counts")
        table[i] = row / row.sum()
    return table
