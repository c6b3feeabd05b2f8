"""Shared exception types."""


class SDeePCError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SDeePCError, ValueError):
    """Vector or matrix dimensions are inconsistent with the model/problem."""


class SimulationDiverged(SDeePCError, RuntimeError):
    """State escaped the divergence guard during simulation.

    Attributes
    ----------
    step : int
        Index of the simulation step at which the guard tripped.
    """

    def __init__(self, step: int, magnitude: float):
        self.step = step
        self.magnitude = magnitude
        super().__init__(
            f"state diverged at step {step} (|x| reached {magnitude:.3e}, "
            f"guard is 1e9)"
        )


class SpecError(SDeePCError, ValueError):
    """Experiment spec file failed to parse or validate."""
