"""Curiosity-driven forward-model learning."""

from ._hhvg import (
    ConfigError,
    ContractViolation,
    DependencyError,
    ExperimentConfig,
    NumericalDomainError,
    UTestResult,
    compare_runs,
    execute_run,
    external_accel,
    gaussian_kl,
    householder_cov,
    mann_whitney_u,
    oracle_rows,
    read_run,
    run_variant_keys,
    selftest,
    step,
)

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DependencyError",
    "ExperimentConfig",
    "NumericalDomainError",
    "UTestResult",
    "compare_runs",
    "execute_run",
    "external_accel",
    "gaussian_kl",
    "householder_cov",
    "mann_whitney_u",
    "oracle_rows",
    "read_run",
    "run_variant_keys",
    "selftest",
    "step",
]
