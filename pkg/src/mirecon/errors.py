"""Exception types shared across the toolkit."""


class MireconError(Exception):
    """Base class for all toolkit errors."""


class MalformedFileError(MireconError, ValueError):
    """A mesh or point-cloud file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ValidationError(MireconError, ValueError):
    """Input data violates a geometric invariant (watertightness, degeneracy...)."""


class ContractError(MireconError, ValueError):
    """A caller broke an operation's precondition."""


class FormatError(MireconError, ValueError):
    """Binary dataset/checkpoint file is corrupt or has the wrong version."""


class NumericError(MireconError, FloatingPointError):
    """NaN or infinity appeared during evaluation."""

    def __init__(self, message, where=None):
        super().__init__(f"{message} (at {where})" if where is not None else message)
        self.where = where
