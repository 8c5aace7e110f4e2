import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qscnot import _kernels
from qscnot.analyzer import AnalyzerSetting, standard_settings
from qscnot.detection import (
    MAX_PAIRS,
    DetectionError,
    DetectorModel,
    RunConfig,
    SourceModel,
    sample_pair_count,
    simulate_counts,
    window_model,
)
from qscnot.gates import TwoQubitState, build_cnot_circuit

CIRCUIT = build_cnot_circuit()
HERALD, GATED = DetectorModel.sspd(), DetectorModel.apd()


def model(label="HV", setting="HV", source=SourceModel(), herald=HERALD, gated=GATED, mode="exact"):
    return window_model(CIRCUIT, TwoQubitState.basis(label), source, herald, gated,
                        AnalyzerSetting.named(setting), mode)


def run(source=SourceModel(), herald=HERALD, gated=GATED, n=20_000, seed=1, label="HV", settings_=None, **kw):
    cfg = RunConfig(n, seed, settings_ or standard_settings("logical"), **kw)
    return simulate_counts(CIRCUIT, TwoQubitState.basis(label), source, herald, gated, cfg)


def test_same_seed_same_counts():
    assert run() == run()


def test_different_seed_different_counts():
    a = [r.total + r.accidental for r in run(n=200_000, seed=1)]
    b = [r.total + r.accidental for r in run(n=200_000, seed=2)]
    assert a != b


def test_workers_do_not_change_counts():
    assert run(workers=3) == run(workers=1)


@pytest.mark.parametrize("mode", ["exact", "incoherent"])
def test_numba_and_numpy_backends_agree(mode):
    src = SourceModel(mean_pairs=0.6)
    for setting in ("HV", "DR"):
        tables = model(setting=setting, source=src, mode=mode,
                       herald=DetectorModel(0.5, 1e-3), gated=DetectorModel(0.5, 1e-2)).kernel_tables()
        key = _kernels.stream_key(7, 3)
        n = 100_000
        assert _kernels.count_windows(key, 0, n, n, tables, "numba") == \
            _kernels.count_windows(key, 0, n, n, tables, "numpy")


def test_counts_independent_of_chunking():
    tables = model(source=SourceModel(mean_pairs=0.5), herald=DetectorModel(0.5, 1e-2),
                   gated=DetectorModel(0.5, 1e-2)).kernel_tables()
    key, n = _kernels.stream_key(3, 0), 50_000
    whole = _kernels.count_windows_np(key, 0, n, n, tables)
    assert _kernels.count_windows_np(key, 0, n, n, tables, chunk=777) == whole
    parts = [_kernels.count_windows(key, lo, min(n, lo + 12_345), n, tables, "numba") for lo in range(0, n, 12_345)]
    assert tuple(map(sum, zip(*parts))) == whole


def test_uniforms_are_in_unit_interval_and_uniform():
    u = _kernels.uniforms_np(_kernels.stream_key(1, 1), np.arange(200_000), 0)
    assert u.min() >= 0 and u.max() < 1
    hist, _ = np.histogram(u, bins=10, range=(0, 1))
    assert np.all(np.abs(hist - 20_000) < 5 * math.sqrt(20_000))


def test_fire_probability_formula():
    m = model(herald=DetectorModel(0.3, 0.01), gated=DetectorModel(0.2, 0.001))
    k = np.arange(2 * MAX_PAIRS + 1)
    assert np.allclose(m.fire_probs(1), 1 - 0.99 * 0.7**k)
    assert np.allclose(m.fire_probs(2), 1 - 0.999 * 0.8**k)


def test_dark_counts_only():
    d1, d2, n = 0.02, 0.03, 400_000
    recs = run(SourceModel(mean_pairs=0.0), DetectorModel(0.5, d1), DetectorModel(0.5, d2), n=n,
               settings_=[AnalyzerSetting.named("HV")])
    r = recs[0]
    expect = n * d1 * d2
    sigma = math.sqrt(expect)
    assert abs(r.total - expect) < 5 * sigma
    assert abs(r.accidental - expect) < 5 * sigma
    assert abs(r.singles1 - n * d1) < 5 * math.sqrt(n * d1)


def test_expected_counts_without_darks_scale_with_efficiencies():
    src = SourceModel(mean_pairs=0.1, distribution="fixed")
    base = model(source=src, herald=DetectorModel(0.1, 0), gated=DetectorModel(0.1, 0)).expected_counts(1)[0]
    double = model(source=src, herald=DetectorModel(0.2, 0), gated=DetectorModel(0.3, 0)).expected_counts(1)[0]
    assert abs(double / base - 6) < 1e-12


def test_single_pair_coincidence_matches_truth_table():
    # one pair, perfect detectors: P(coincidence) = success * table entry
    src = SourceModel(mean_pairs=1.0, overlap=1.0, distribution="fixed")
    ideal = DetectorModel(1.0, 0.0)
    for label, out, p in (("HV", "HH", 1 / 9), ("HV", "HV", 0.0), ("VH", "VH", 1 / 9)):
        both, _ = model(label, out, src, ideal, ideal).expected_counts(1)
        assert abs(both - p) < 1e-12


@pytest.mark.parametrize("setting", ["HV", "HH", "DR"])
def test_monte_carlo_matches_expectation(setting):
    n = 1_000_000
    s = AnalyzerSetting.named(setting)
    src = SourceModel(mean_pairs=0.15)
    herald, gated = DetectorModel(0.2, 3e-4), DetectorModel(0.3, 3e-3)
    rec = run(src, herald, gated, n=n, settings_=[s])[0]
    total, acc = model(setting=setting, source=src, herald=herald, gated=gated).expected_counts(n)
    assert abs(rec.total - total) < 5 * math.sqrt(total) + 1
    assert abs(rec.accidental - acc) < 5 * math.sqrt(acc) + 1


@pytest.mark.parametrize("mode", ["exact", "incoherent"])
def test_joint_tables_are_distributions(mode):
    m = model(source=SourceModel(mean_pairs=0.4), mode=mode)
    for n in range(MAX_PAIRS + 1):
        j = m.joint(n)
        assert abs(j.sum() - 1) < 1e-12
        assert (j >= -1e-15).all()


def test_modes_differ_only_from_two_pairs():
    exact = model(setting="DR", mode="exact")
    inc = model(setting="DR", mode="incoherent")
    assert np.allclose(exact.joint(1), inc.joint(1))
    assert not np.allclose(exact.joint(2), inc.joint(2))


def test_thermal_multi_pair_fraction():
    src = SourceModel(mean_pairs=0.15)
    assert abs(src.multi_pair_fraction() - 0.15 / 1.15) < 1e-15
    draws = sample_pair_count(src, np.random.default_rng(0), size=1_000_000)
    nonzero = draws[draws > 0]
    frac = np.mean(nonzero >= 2)
    assert abs(frac - 0.15 / 1.15) < 5 * math.sqrt(frac * (1 - frac) / len(nonzero))


def test_poisson_multi_pair_fraction():
    mu = 0.2
    src = SourceModel(mean_pairs=mu, distribution="poisson")
    p = src.pair_probabilities()
    assert abs(src.multi_pair_fraction() - (1 - p[0] - p[1]) / (1 - p[0])) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 5), st.sampled_from(["thermal", "poisson", "fixed"]))
def test_pair_probabilities_normalized(mu, dist):
    p = SourceModel(mean_pairs=mu, distribution=dist).pair_probabilities()
    assert abs(p.sum() - 1) < 1e-12
    assert (p >= 0).all()


def test_raman_photons_add_background():
    src = SourceModel(raman_prob=0.1)
    m = model(source=src)
    assert m.background1 > HERALD.dark_prob
    assert abs(m.background2 - (1 - (1 - GATED.dark_prob) * (1 - 0.05 * GATED.efficiency))) < 1e-15


def test_validation_errors():
    with pytest.raises(DetectionError):
        DetectorModel(1.5, 0.0)
    with pytest.raises(DetectionError):
        SourceModel(mean_pairs=-1)
    with pytest.raises(DetectionError):
        SourceModel(distribution="flat")
    with pytest.raises(DetectionError):
        RunConfig(0, 1, standard_settings())
    with pytest.raises(DetectionError):
        RunConfig(10, 1, standard_settings(), multi_pair_mode="magic")
    with pytest.raises(DetectionError):
        simulate_counts(CIRCUIT, TwoQubitState.basis("HV"), SourceModel(), HERALD, GATED, RunConfig(10, 1, ()))


@pytest.mark.parametrize("n", [1, 2, 5, 4097, 9000])
def test_backends_agree_on_short_and_chunk_boundary_runs(n):
    tables = model(source=SourceModel(mean_pairs=2.0), herald=DetectorModel(0.5, 0.1),
                   gated=DetectorModel(0.5, 0.1)).kernel_tables()
    key = _kernels.stream_key(11, 2)
    assert _kernels.count_windows(key, 0, n, n, tables, "numba") == _kernels.count_windows(key, 0, n, n, tables, "numpy")
    mid = n // 2
    parts = [_kernels.count_windows(key, 0, mid, n, tables, "numba"), _kernels.count_windows(key, mid, n, n, tables, "numba")]
    assert tuple(map(sum, zip(*parts))) == _kernels.count_windows(key, 0, n, n, tables, "numpy")
