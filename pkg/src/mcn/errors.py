class McnError(ValueError):
    """Base class for all errors raised by this package."""


class FlowValidationError(McnError):
    """Flow maps are malformed or not stochastic."""


class ClusteringError(McnError):
    """Markov clustering hit a column with no remaining mass."""

    def __init__(self, message, column=None, iteration=None):
        super().__init__(message)
        self.column = column
        self.iteration = iteration


class LabelingError(McnError):
    """Ground truth cannot be expressed on the lattice."""


class FormatError(McnError):
    """A file does not follow its declared binary or JSON layout."""


class TrainingError(McnError):
    """A loss became non-finite during training."""
