"""Error taxonomy shared by the pipeline stages."""


class MppfvError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MppfvError):
    """A model, network, or config is internally inconsistent."""


class InputError(MppfvError, ValueError):
    """Caller-supplied data violates an operation's contract."""


class NumericError(MppfvError, ArithmeticError):
    """A computation produced non-finite or degenerate values."""


class StageError(MppfvError):
    """A pipeline stage is missing one of its inputs.

    Names the stage that must run first so the CLI can say what to do.
    """

    def __init__(self, missing: str, run_first: str):
        super().__init__(f"missing {missing}; run the '{run_first}' stage first")
        self.missing = missing
        self.run_first = run_first
