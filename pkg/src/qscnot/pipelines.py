"""Experiment pipelines: simulate counts, reconstruct, and assemble a result bundle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .analyzer import AnalyzerSetting, standard_settings
from .config import ExperimentConfig
from .detection import CountRecord, RunConfig, SourceModel, simulate_counts
from .gates import BELL_INPUTS, BELL_KETS, IDEAL_CNOT, LOGICAL_INPUTS, TwoQubitState, build_cnot_circuit
from .io import record_dict
from . import tomography as tomo

# every gate input and analyzer setting owns a fixed random stream, so the same
# measurement gives the same counts in every pipeline that makes it
INPUT_LABELS = tuple(LOGICAL_INPUTS) + tuple(c + t for c, t in BELL_INPUTS.values())
INPUT_LABELS += tuple(a + b for a, b in itertools.product("HVDA", repeat=2) if a + b not in INPUT_LABELS)
SETTING_CODES = {a + b: i for i, (a, b) in enumerate(itertools.product("HVDARL", repeat=2))}
STREAMS_PER_INPUT = 64
CNOT_COLUMN = (0, 1, 3, 2)


@dataclass
class PipelineResult:
    bundle: dict
    records: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    converged: bool = True


def stream_for(input_label: str, setting: AnalyzerSetting) -> int:
    base = STREAMS_PER_INPUT * INPUT_LABELS.index(input_label)
    return base + SETTING_CODES.get(setting.id, len(SETTING_CODES))


def measure(cfg: ExperimentConfig, input_label: str, settings, source: SourceModel | None = None) -> list[CountRecord]:
    """Simulated count records for one gate input over ``settings``."""
    settings = tuple(settings)
    run = RunConfig(cfg.n_gates, cfg.seed, settings, cfg.gate_period_ns, cfg.multi_pair_mode, cfg.workers)
    psi = TwoQubitState.basis(input_label)
    return simulate_counts(build_cnot_circuit(), psi, source or cfg.source, cfg.herald, cfg.gated, run,
                           streams=[stream_for(input_label, s) for s in settings])


def logical_fidelity(table: np.ndarray) -> float:
    """Mean probability of the correct CNOT output over the logical inputs."""
    return float(np.mean([table[i, CNOT_COLUMN[i]] for i in range(4)]))


def _dataset(records, label) -> tomo.TomoDataset:
    return tomo.TomoDataset.from_records(records, TwoQubitState.basis(label), label)


def _metrics_dict(m: tomo.Metrics) -> dict:
    return {"fidelity": m.fidelity, "tangle": m.tangle, "linear_entropy": m.linear_entropy}


def _base_bundle(cfg: ExperimentConfig) -> dict:
    return {"version": __version__, "seed": cfg.seed, "pipeline": cfg.pipeline, "config": cfg.as_sections()}


def _bell_states(cfg, datasets: dict, prefix: str, bundle: dict, tables: dict) -> bool:
    converged = True
    rows = []
    for name, ds in datasets.items():
        fit = tomo.mle_state(ds, cfg.likelihood)
        converged &= fit.converged
        m = tomo.metrics(fit.rho, BELL_KETS[name])
        bundle["matrices"][f"{prefix}rho_{name}"] = fit.rho.matrix
        bundle["metrics"][f"{prefix}{name}"] = _metrics_dict(m)
        bundle["fits"][f"{prefix}{name}"] = fit.metadata()
        rows.append([name, m.fidelity, m.tangle, m.linear_entropy])
    tables[f"{prefix}bell_metrics"] = (["state", "fidelity", "tangle", "linear_entropy"], rows)
    return converged


def _truth_table_rows(table):
    return (["input"] + list(LOGICAL_INPUTS),
            [[LOGICAL_INPUTS[i]] + [float(x) for x in table[i]] for i in range(len(table))])


def run_truth_table(cfg: ExperimentConfig) -> PipelineResult:
    settings = standard_settings("logical")
    records = {label: measure(cfg, label, settings) for label in LOGICAL_INPUTS}
    table = tomo.truth_table_from_datasets([_dataset(records[l], l) for l in LOGICAL_INPUTS])
    bundle = _base_bundle(cfg)
    bundle.update(matrices={"truth_table": table},
                  metrics={"average_logical_fidelity": logical_fidelity(table)},
                  records={k: [record_dict(r) for r in v] for k, v in records.items()})
    return PipelineResult(bundle, records, {"truth_table": _truth_table_rows(table)})


def run_bell(cfg: ExperimentConfig, source: SourceModel | None = None) -> PipelineResult:
    settings = standard_settings(cfg.settings)
    records, datasets = {}, {}
    for name, (c, t) in BELL_INPUTS.items():
        records[c + t] = measure(cfg, c + t, settings, source)
        datasets[name] = _dataset(records[c + t], c + t)
    bundle = _base_bundle(cfg)
    bundle.update(matrices={}, metrics={}, fits={}, records={k: [record_dict(r) for r in v] for k, v in records.items()})
    tables = {}
    converged = _bell_states(cfg, datasets, "", bundle, tables)
    return PipelineResult(bundle, records, tables, converged)


def run_tomo_state(cfg: ExperimentConfig) -> PipelineResult:
    label = cfg.input
    records = {label: measure(cfg, label, standard_settings(cfg.settings))}
    fit = tomo.mle_state(_dataset(records[label], label), cfg.likelihood)
    target = IDEAL_CNOT @ TwoQubitState.basis(label).amplitudes
    m = tomo.metrics(fit.rho, target / np.linalg.norm(target))
    bundle = _base_bundle(cfg)
    bundle.update(matrices={"rho": fit.rho.matrix, "target": target.reshape(4, 1)},
                  metrics=_metrics_dict(m), fits={"state": fit.metadata()},
                  records={label: [record_dict(r) for r in records[label]]})
    tables = {"state_metrics": (["input", "fidelity", "tangle", "linear_entropy"],
                                [[label, m.fidelity, m.tangle, m.linear_entropy]])}
    return PipelineResult(bundle, records, tables, fit.converged)


def run_tomo_process(cfg: ExperimentConfig) -> PipelineResult:
    """Process fit over the logical and superposition inputs, then multi-pair correction
    of the truth table and the Bell states."""
    settings = standard_settings(cfg.settings)
    labels = list(LOGICAL_INPUTS) + [c + t for c, t in BELL_INPUTS.values()]
    records = {label: measure(cfg, label, settings) for label in labels}
    datasets = {label: _dataset(records[label], label) for label in labels}
    fit = tomo.fit_pure_process(list(datasets.values()), cfg.source, cfg.herald, cfg.gated,
                                starts=cfg.process_starts, seed=cfg.seed, fit_scales=cfg.fit_scales,
                                model=cfg.multi_pair_mode)
    scales = dict(zip(labels, fit.scales))
    corrected = {label: tomo.multipair_correct(ds, fit.process, cfg.source, cfg.herald, cfg.gated,
                                               scale=scales[label], method=cfg.correction,
                                               model=cfg.multi_pair_mode)
                 for label, ds in datasets.items()}
    logical = [datasets[l] for l in LOGICAL_INPUTS]
    raw_table = tomo.truth_table_from_datasets(logical)
    cor_table = tomo.truth_table_from_datasets([corrected[l] for l in LOGICAL_INPUTS])

    bundle = _base_bundle(cfg)
    bundle.update(
        matrices={"process": fit.process.matrix, "postselected": fit.process.postselected(),
                  "truth_table_raw": raw_table, "truth_table_corrected": cor_table},
        metrics={"process_fidelity": fit.fidelity,
                 "mean_residual_sigma": fit.mean_residual,
                 "rms_residual_sigma": fit.rms_residual,
                 "average_logical_fidelity_raw": logical_fidelity(raw_table),
                 "average_logical_fidelity_corrected": logical_fidelity(cor_table)},
        fits={"process": fit.metadata()},
        residuals={label: fit.residuals[i * len(settings):(i + 1) * len(settings)]
                   for i, label in enumerate(labels)},
        records={k: [record_dict(r) for r in v] for k, v in records.items()},
    )
    tables = {"truth_table_raw": _truth_table_rows(raw_table),
              "truth_table_corrected": _truth_table_rows(cor_table),
              "process_residuals": (["input", "setting_id", "residual_sigma"],
                                    [[label, s.id, float(fit.residuals[i * len(settings) + j])]
                                     for i, label in enumerate(labels) for j, s in enumerate(settings)])}
    bell = {name: datasets[c + t] for name, (c, t) in BELL_INPUTS.items()}
    bell_cor = {name: corrected[c + t] for name, (c, t) in BELL_INPUTS.items()}
    converged = fit.converged
    converged &= _bell_states(cfg, bell, "raw_", bundle, tables)
    converged &= _bell_states(cfg, bell_cor, "corrected_", bundle, tables)
    return PipelineResult(bundle, records, tables, converged)


def run_sweep(cfg: ExperimentConfig) -> PipelineResult:
    """Raw Bell-state metrics for each mean pair number."""
    bundle = _base_bundle(cfg)
    bundle.update(metrics={}, fits={})
    rows = []
    converged = True
    records = {}
    for mu in cfg.sweep_mean_pairs:
        res = run_bell(cfg, replace(cfg.source, mean_pairs=mu))
        converged &= res.converged
        key = f"mu={mu!r}"
        bundle["metrics"][key] = res.bundle["metrics"]
        bundle["fits"][key] = res.bundle["fits"]
        for name, m in res.bundle["metrics"].items():
            rows.append([mu, name, m["fidelity"], m["tangle"], m["linear_entropy"]])
        records.update({f"{key}_{k}": v for k, v in res.records.items()})
    tables = {"sweep": (["mean_pairs", "state", "fidelity", "tangle", "linear_entropy"], rows)}
    return PipelineResult(bundle, records, tables, converged)


PIPELINE_FUNCS = {
    "truth-table": run_truth_table,
    "bell": run_bell,
    "tomo-state": run_tomo_state,
    "tomo-process": run_tomo_process,
    "sweep": run_sweep,
}


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    result = PIPELINE_FUNCS[cfg.pipeline](cfg)
    result.bundle["converged"] = result.converged
    return result
