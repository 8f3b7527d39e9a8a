from ._core import (
    Config,
    Program,
    deconv_matrix,
    enumerate_indices,
    estimate,
    experiment,
    linear_riccati,
    monomials,
    oracle,
    oracle_moments,
    simulate,
    solve,
)

__all__ = [
    "Config",
    "Program",
    "deconv_matrix",
    "enumerate_indices",
    "estimate",
    "experiment",
    "linear_riccati",
    "monomials",
    "oracle",
    "oracle_moments",
    "simulate",
    "solve",
]
