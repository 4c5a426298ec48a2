"""Package exception types, mapped to CLI exit codes."""


class NumericalError(RuntimeError):
    """A linear-algebra or optimization step failed (CLI exit code 3)."""


class DegenerateEnsembleError(NumericalError):
    """All incremental particle weights vanished at one temperature."""

    def __init__(self, temperature_index: int, tau: float):
        self.temperature_index = temperature_index
        self.tau = tau
        super().__init__(
            f"all incremental weights are zero at temperature index "
            f"{temperature_index} (tau={tau:.6g})"
        )


class InsufficientSamplesError(RuntimeError):
    """Monte Carlo sample too small for the target error rate (exit code 4)."""

    def __init__(self, message: str, suggested_n: int | None = None):
        self.suggested_n = suggested_n
        super().__init__(message)
