"""Exception types shared across the package.

Each category maps to one kind of contract violation so callers (and the
CLI) can translate failures into exit codes without string matching.
"""


class ParameterError(ValueError):
    """An argument is outside its documented range or enum."""


class ShapeError(ValueError):
    """Array shapes or resolutions are inconsistent."""


class DataError(ValueError):
    """A dataset or label set violates its contract (empty, degenerate, mixed)."""


class StateError(RuntimeError):
    """An object is not in a state that permits the operation (e.g. untrained)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss; carries the offending component."""

    def __init__(self, component: str, value: float):
        self.component = component
        self.value = value
        super().__init__(f"non-finite training loss: {component}={value!r}")


class ImageDecodeError(OSError):
    """A stored image could not be decoded; carries the path."""

    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        msg = f"cannot decode image: {self.path}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
