"""Exception types shared across the package.

Each class carries a ``category`` string; the CLI prints it as the first
token of its one-line error message and maps it to an exit code.
"""


class BioregError(Exception):
    category = "Error"
    exit_code = 2


class InvalidInput(BioregError, ValueError):
    category = "InvalidInput"


class GridMismatch(BioregError, ValueError):
    category = "GridMismatch"


class EmptyMask(BioregError, ValueError):
    category = "EmptyMask"


class CropTooLarge(BioregError, ValueError):
    category = "CropTooLarge"


class InvalidMaterial(BioregError, ValueError):
    category = "InvalidMaterial"


class LabelMismatch(BioregError, ValueError):
    category = "LabelMismatch"


class InvalidSpec(BioregError, ValueError):
    category = "InvalidSpec"


class DegenerateSample(BioregError, ValueError):
    category = "DegenerateSample"


class ParseError(BioregError, ValueError):
    category = "ParseError"


class NonFiniteLoss(BioregError, FloatingPointError):
    """Raised when the objective becomes NaN or Inf during a solve.

    ``history`` holds the per-iteration loss records up to the failure.
    """

    category = "NonFiniteLoss"
    exit_code = 3

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class MissingMasks(UserWarning):
    """Segmentation weight is positive but no masks were supplied."""
