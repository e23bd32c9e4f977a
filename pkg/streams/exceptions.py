"""Error types raised across the streams app."""


class StnetError(Exception):
    """Base class for every error the toolkit raises on purpose."""


class ShapeError(StnetError, ValueError):
    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"{message} (node {node!r})"
        super().__init__(message)


class NonFiniteError(StnetError, ValueError):
    def __init__(self, message, node=None):
        self.node = node
        if node is not None:
            message = f"{message} (node {node!r})"
        super().__init__(message)


class GraphStateError(StnetError, RuntimeError):
    pass


class CheckpointError(StnetError, ValueError):
    pass


class SliceError(StnetError, ValueError):
    pass


class CorruptionError(StnetError, ValueError):
    pass


class ArchError(StnetError, ValueError):
    pass


class NameFormatError(StnetError, ValueError):
    """Raised by the STNet name parser; ``position`` is the failing character index."""

    def __init__(self, message, text, position):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


class DatasetError(StnetError, ValueError):
    pass


class ProtocolError(StnetError, ValueError):
    pass


class LabelError(StnetError, ValueError):
    pass
