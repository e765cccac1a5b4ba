"""Entropic-OT negative sampling for contrastive learning.

Thin wrapper over the compiled ``_otneg`` extension. Arrays are float64 and
row-major; one row is one sample.
"""

from ._otneg import (
    ConfigError,
    Coupling,
    Encoder,
    NegativeDistribution,
    NumericalError,
    OtnegError,
    brute_force_ot,
    config_keys,
    demo_degeneracy,
    evaluate_loss,
    generate_dataset,
    linear_readout,
    mean_negative_similarity,
    ot_negative_distribution,
    sample_negatives,
    schroedinger_residual,
    sinkhorn,
    tilt_form_residual,
    tilt_negative_distribution,
    train,
    uniform_negative_distribution,
)

__all__ = [
    "ConfigError",
    "Coupling",
    "Encoder",
    "NegativeDistribution",
    "NumericalError",
    "OtnegError",
    "brute_force_ot",
    "config_keys",
    "demo_degeneracy",
    "evaluate_loss",
    "generate_dataset",
    "linear_readout",
    "mean_negative_similarity",
    "ot_negative_distribution",
    "sample_negatives",
    "schroedinger_residual",
    "sinkhorn",
    "tilt_form_residual",
    "tilt_negative_distribution",
    "train",
    "uniform_negative_distribution",
]
