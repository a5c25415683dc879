"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range."""


class EmptyInputError(ValueError):
    pass


class ContractError(RuntimeError):
    """An API precondition that is not about shapes or values was violated."""


class DataError(ValueError):
    """Input data (labels, sequences) is malformed."""


class FormatError(ValueError):
    """A binary or text file does not match its declared layout.

    ``offset`` is the byte offset (binary files) and ``line`` the 1-based
    line number (text files) at which the problem was detected, when known.
    """

    def __init__(self, message, path=None, offset=None, line=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if offset is not None:
            loc.append(f"offset {offset}")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{': '.join(loc)}: {message}" if loc else message)
        self.path = path
        self.offset = offset
        self.line = line


class ConfigError(ValueError):
    """One or more configuration fields are invalid.

    All problems are collected before raising so the caller sees every
    violated field at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, video_id, terms):
        self.epoch = epoch
        self.video_id = video_id
        self.terms = dict(terms)
        detail = ", ".join(f"{k}={v!r}" for k, v in self.terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, video {video_id!r} ({detail})")
