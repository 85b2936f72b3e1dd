class Md2iError(Exception):
    """Base class for all errors raised by md2i."""


class DimensionError(Md2iError, ValueError):
    pass


class StateError(Md2iError, RuntimeError):
    pass


class ParameterError(Md2iError, ValueError):
    pass


class FormatError(Md2iError, ValueError):
    pass


class ParseError(Md2iError, ValueError):
    def __init__(self, msg, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            msg = f"{msg} ({', '.join(where)})"
        super().__init__(msg)
        self.row = row
        self.column = column


class ConfigError(Md2iError, ValueError):
    pass
