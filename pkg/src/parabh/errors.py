"""Exception types shared across the laboratory.

Exit-code mapping used by the CLI: 2 for an experiment whose hypotheses
were not met, 3 for configuration/validation problems, 4 for numerical
rejections (non-monotone stencils, unreached tolerances, degenerate
normalizations).
"""


class ParabhError(Exception):
    """Base class for all laboratory errors."""

    exit_code = 1


class ValidationError(ParabhError):
    """Bad configuration or precondition violation (exit code 3)."""

    exit_code = 3


class NumericalRejection(ParabhError):
    """The numerics refused to proceed (exit code 4)."""

    exit_code = 4


class HypothesisNotMet(ParabhError):
    """An experiment gate failed; negative result, not a bug (exit code 2)."""

    exit_code = 2
