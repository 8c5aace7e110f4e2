"""Experiment configuration: sectioned INI files with units in the key names."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

from .detection import DetectorModel, SourceModel

PIPELINES = ("truth-table", "bell", "tomo-state", "tomo-process", "sweep")

# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "pipeline": (str, "bell"),
        "n_gates": (int, 10_000_000),
        "seed": (int, 1),
        "gate_period_ns": (float, 20.0),
        "multi_pair_mode": (str, "exact"),
        "workers": (int, 1),
    },
    "source": {
        "mean_pairs_per_gate": (float, 0.15),
        "hom_visibility": (float, 0.94),
        "distribution": (str, "thermal"),
        "raman_prob_per_gate": (float, 0.0),
    },
    "herald": {
        "efficiency": (float, 0.01),
        "dark_prob_per_gate": (float, 3e-6),
    },
    "gated": {
        "efficiency": (float, 0.20),
        "dark_prob_per_gate": (float, 3e-3),
    },
    "tomography": {
        "settings": (str, "16"),
        "likelihood": (str, "poisson"),
        "fit_scales": (bool, False),
        "correction": (str, "signal"),
        "process_starts": (int, 5),
        "input": (str, "DV"),
    },
    "sweep": {
        "mean_pairs_values": (str, "0.015, 0.05, 0.15"),
    },
}


class ConfigError(ValueError):
    """Raised with every problem found, one per line."""

    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str = "bell"
    n_gates: int = 10_000_000
    seed: int = 1
    gate_period_ns: float = 20.0
    multi_pair_mode: str = "exact"
    workers: int = 1
    source: SourceModel = field(default_factory=SourceModel)
    herald: DetectorModel = field(default_factory=lambda: DetectorModel(0.01, 3e-6, "herald"))
    gated: DetectorModel = field(default_factory=lambda: DetectorModel(0.20, 3e-3, "gated"))
    settings: str = "16"
    likelihood: str = "poisson"
    fit_scales: bool = False
    correction: str = "signal"
    process_starts: int = 5
    input: str = "DV"
    sweep_mean_pairs: tuple[float, ...] = (0.015, 0.05, 0.15)
    hom_visibility: float = 0.94

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    def as_sections(self) -> dict:
        """Config echo, keyed like the INI file."""
        return {
            "run": {"pipeline": self.pipeline, "n_gates": self.n_gates, "seed": self.seed,
                    "gate_period_ns": self.gate_period_ns, "multi_pair_mode": self.multi_pair_mode,
                    "workers": self.workers},
            "source": {"mean_pairs_per_gate": self.source.mean_pairs,
                       "hom_visibility": self.hom_visibility,
                       "distribution": self.source.distribution,
                       "raman_prob_per_gate": self.source.raman_prob},
            "herald": {"efficiency": self.herald.efficiency, "dark_prob_per_gate": self.herald.dark_prob},
            "gated": {"efficiency": self.gated.efficiency, "dark_prob_per_gate": self.gated.dark_prob},
            "tomography": {"settings": self.settings, "likelihood": self.likelihood,
                           "fit_scales": self.fit_scales, "correction": self.correction,
                           "process_starts": self.process_starts, "input": self.input},
            "sweep": {"mean_pairs_values": list(self.sweep_mean_pairs)},
        }


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def validate(cfg: ExperimentConfig) -> None:
    problems = _problems(cfg)
    if problems:
        raise ConfigError(problems)


def _problems(cfg: ExperimentConfig) -> list[str]:
    problems = []
    if cfg.pipeline not in PIPELINES:
        problems.append(f"run.pipeline: must be one of {', '.join(PIPELINES)}")
    if cfg.n_gates < 1:
        problems.append("run.n_gates: must be at least 1")
    if cfg.seed < 0:
        problems.append("run.seed: must be non-negative")
    if not cfg.gate_period_ns > 0:
        problems.append("run.gate_period_ns: must be positive")
    if cfg.multi_pair_mode not in ("exact", "incoherent"):
        problems.append("run.multi_pair_mode: must be exact or incoherent")
    if cfg.workers < 1:
        problems.append("run.workers: must be at least 1")
    if cfg.settings not in ("16", "36"):
        problems.append("tomography.settings: must be 16 or 36")
    if cfg.likelihood not in ("poisson", "gaussian"):
        problems.append("tomography.likelihood: must be poisson or gaussian")
    if cfg.correction not in ("signal", "excess"):
        problems.append("tomography.correction: must be signal or excess")
    if cfg.process_starts < 1:
        problems.append("tomography.process_starts: must be at least 1")
    if len(cfg.input) != 2 or any(ch not in "HVDA" for ch in cfg.input.upper()):
        problems.append("tomography.input: two letters from H, V, D, A (control then target)")
    if not cfg.sweep_mean_pairs or any(not (m >= 0 and math.isfinite(m)) for m in cfg.sweep_mean_pairs):
        problems.append("sweep.mean_pairs_values: non-empty list of non-negative numbers")
    return problems


def load_config(text: str | None = None) -> ExperimentConfig:
    """Parse INI text (``None`` gives the defaults).  Unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    problems = []
    if text:
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([f"syntax: {exc}"]) from exc
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            problems.append(f"[{section}]: unknown section")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown key")
                continue
            kind = SCHEMA[section][key][0]
            try:
                values[(section, key)] = _parse_bool(raw) if kind is bool else kind(raw.strip())
            except ValueError:
                problems.append(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}")

    def get(section, key):
        return values.get((section, key), SCHEMA[section][key][1])

    defaults = ExperimentConfig()
    sweep = ()
    try:
        sweep = tuple(float(x) for x in str(get("sweep", "mean_pairs_values")).split(",") if x.strip())
    except ValueError:
        problems.append("sweep.mean_pairs_values: comma-separated numbers expected")
        sweep = defaults.sweep_mean_pairs

    parts = {}
    builders = {
        "source": lambda: SourceModel(get("source", "mean_pairs_per_gate"),
                                      math.sqrt(max(0.0, get("source", "hom_visibility"))),
                                      get("source", "raman_prob_per_gate"), get("source", "distribution")),
        "herald": lambda: DetectorModel(get("herald", "efficiency"), get("herald", "dark_prob_per_gate"), "herald"),
        "gated": lambda: DetectorModel(get("gated", "efficiency"), get("gated", "dark_prob_per_gate"), "gated"),
    }
    vis = get("source", "hom_visibility")
    if not 0.0 <= vis <= 1.0:
        problems.append("source.hom_visibility: must lie in [0, 1]")
    for name, build in builders.items():
        try:
            parts[name] = build()
        except ValueError as exc:
            # detector errors already carry the section name
            problems.append(str(exc) if name != "source" else f"source: {exc}")
            parts[name] = getattr(defaults, name)
    cfg = ExperimentConfig(
        pipeline=get("run", "pipeline"),
        n_gates=get("run", "n_gates"),
        seed=get("run", "seed"),
        gate_period_ns=get("run", "gate_period_ns"),
        multi_pair_mode=get("run", "multi_pair_mode"),
        workers=get("run", "workers"),
        source=parts["source"],
        herald=parts["herald"],
        gated=parts["gated"],
        settings=get("tomography", "settings"),
        likelihood=get("tomography", "likelihood"),
        fit_scales=get("tomography", "fit_scales"),
        correction=get("tomography", "correction"),
        process_starts=get("tomography", "process_starts"),
        input=get("tomography", "input").upper(),
        sweep_mean_pairs=sweep,
        hom_visibility=vis,
    )
    problems += _problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that loads back to ``cfg``."""
    out = []
    for section, items in cfg.as_sections().items():
        out.append(f"[{section}]")
        for key, value in items.items():
            if isinstance(value, list):
                value = ", ".join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


__all__ = ["ConfigError", "ExperimentConfig", "load_config", "dump_config", "validate", "PIPELINES"]
