"""Exception types shared across the package."""


class SimulationFault(RuntimeError):
    """Synthesis hit a non-finite state.

    Carries the index of the offending sample so a failed Monte Carlo
    draw can be reported and replaced.
    """

    def __init__(self, sample_index, message=None):
        self.sample_index = int(sample_index)
        if message is None:
            message = "non-finite state at sample %d" % self.sample_index
        super().__init__(message)


class AnalysisError(ValueError):
    """A measurement or post-processing step cannot produce a valid result

    (degenerate variance, too few cycles, insufficient spectral
    resolution, and the like).
    """
