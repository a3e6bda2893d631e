"""Breath-sound speaker and posture classification pipeline.

Thin Python surface over the C++ core: FIR preprocessing, breath
segmentation, channel alignment, empirical mode decomposition, analytic
signals, stationarity testing, and the synthetic-data/experiment drivers.
"""

from ._core import (
    adf_test,
    align_channels,
    analytic_signal,
    apply_fir,
    design_highpass_fir,
    emd,
    generate_synthetic,
    instantaneous_frequency,
    instantaneous_magnitude,
    load_recording,
    normalize_energy,
    run_experiment,
    segment_breaths,
)

__version__ = "0.1.0"

__all__ = [
    "adf_test",
    "align_channels",
    "analytic_signal",
    "apply_fir",
    "design_highpass_fir",
    "emd",
    "generate_synthetic",
    "instantaneous_frequency",
    "instantaneous_magnitude",
    "load_recording",
    "normalize_energy",
    "run_experiment",
    "segment_breaths",
]
