"""Exception types. CLI exit codes key off these."""


class GhostConvError(Exception):
    pass


class ShapeError(GhostConvError, ValueError):
    """Operand shapes are inconsistent with an operation or layer."""


class SpecError(GhostConvError, ValueError):
    """A network spec failed to parse or validate.

    ``index`` is the zero-based position of the offending layer (or ``None``
    for spec-level problems such as a bad width multiplier).
    """

    def __init__(self, message, index=None, line=None):
        self.index = index
        self.line = line
        where = []
        if index is not None:
            where.append(f"layer {index}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class FormatError(GhostConvError, IOError):
    """A binary or text file does not match its documented layout."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts))
