"""Models for SFMIPA scenarios and reports."""

from sfmipa.models.reports import (
    FcfsReport,
    GradientEstimate,
    IterateRecord,
    OptimizationResult,
    OracleReport,
    OracleRow,
    SweepPoint,
)
from sfmipa.models.scenario import (
    InitialConditions,
    OptimizerConfig,
    PolicyParams,
    ProcessSpec,
    Scenario,
    SimulationSettings,
)
