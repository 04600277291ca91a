"""Non-parametric multi-state models with relative survival."""

from ._msrs import (
    DAYS_PER_YEAR,
    DataError,
    EventDataset,
    ProbTransError,
    RateTable,
    RateTableError,
    TransitionModel,
    estimate,
    format_date,
    nelson_aalen,
    parse_date,
    sim,
)

__all__ = [
    "DAYS_PER_YEAR",
    "DataError",
    "EventDataset",
    "ProbTransError",
    "RateTable",
    "RateTableError",
    "TransitionModel",
    "estimate",
    "format_date",
    "nelson_aalen",
    "parse_date",
    "sim",
]
