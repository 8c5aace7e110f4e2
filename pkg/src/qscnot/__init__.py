"""Simulation and tomography of a post-selected linear-optics CNOT with telecom photon pairs."""

__version__ = "0.1.0"

from .analyzer import AnalyzerSetting, analyzer_projector, standard_settings
from .detection import CountRecord, DetectorModel, RunConfig, SourceModel, simulate_counts, window_model
from .fock import DensityMatrix, ModeSet, ModeTransfer, PureState, apply_transfer, post_select
from .gates import QsSpec, TwoQubitState, build_cnot_circuit, bell_prep, run_cnot, truth_table
from .tomography import (
    ProcessMatrix,
    TomoDataset,
    fidelity,
    fit_pure_process,
    linear_entropy,
    mle_state,
    multipair_correct,
    process_fidelity,
    tangle,
)
