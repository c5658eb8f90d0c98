"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file or bitstream does not follow its binary layout."""


class SubgradientPointError(ValueError):
    """Evaluation point sits on (or too close to) a kink of the relaxed rate."""


class FitDivergence(FloatingPointError):
    """The fitted loss became non-finite."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"loss diverged at step {step}")
