"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class IllegalSequenceError(InvalidInputError):
    """A tag sequence violates BIOES; ``position`` is the first bad index."""

    def __init__(self, message: str, position: int | None = None, sentence: int | None = None):
        super().__init__(message)
        self.position = position
        self.sentence = sentence


class InvalidConfigError(ValueError):
    pass


class InvalidSpecError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class EngineError(RuntimeError):
    """A translation engine failed; ``request`` holds the text that was sent."""

    def __init__(self, message: str, request: str):
        super().__init__(message)
        self.request = request


class ConllParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
