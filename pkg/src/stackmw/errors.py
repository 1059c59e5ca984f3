"""Exception hierarchy shared by every layer of the middleware."""

from __future__ import annotations


class StackmwError(Exception):
    """Base class for all middleware errors."""

    code = "error"


class SchemaError(StackmwError):
    """Rejected message definition. Always carries a 1-based line and column."""

    code = "schema"

    def __init__(self, message: str, line: int, column: int, kind: str = "syntax", source: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.kind = kind
        self.source = source
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {kind} error: {message}")


class ValidationError(StackmwError):
    """A value does not conform to its schema; ``report`` lists every violation."""

    code = "validation"

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(str(v) for v in report) or "invalid value")


class DecodeError(StackmwError):
    code = "decode"


class YamlSyntaxError(StackmwError):
    code = "yaml_syntax"


class UnknownKeyError(ValidationError):
    code = "unknown_key"


# router ---------------------------------------------------------------------


class RouterError(StackmwError):
    code = "router"


class ConfigError(RouterError):
    code = "config"


class UnknownTypeError(RouterError):
    code = "unknown_type"


class TypeConflictError(RouterError):
    code = "type_conflict"


class UnknownGidError(RouterError):
    code = "unknown_gid"


class RoleError(RouterError):
    code = "role"


class PayloadError(RouterError):
    code = "schema_violation"


class SequenceError(RouterError):
    code = "sequence"


class PatternError(RouterError):
    code = "pattern"


# participants / services -------------------------------------------------------


class ParticipantError(StackmwError):
    code = "participant"


class CorrelationError(ParticipantError):
    code = "correlation"


class UnknownRequestError(ParticipantError):
    code = "unknown_request"


class RouterUnreachable(StackmwError):
    code = "unreachable"


# wire / nodes / bridge ---------------------------------------------------------


class ProtocolError(StackmwError):
    code = "protocol"


class NodeError(StackmwError):
    code = "node"


class TranslationError(StackmwError):
    code = "translation"


_BY_CODE: dict[str, type[StackmwError]] = {}


def _collect(cls: type[StackmwError]) -> None:
    _BY_CODE.setdefault(cls.code, cls)
    for sub in cls.__subclasses__():
        _collect(sub)


_collect(StackmwError)


def error_from_code(code: str, message: str) -> StackmwError:
    """Rebuild an exception received as ``(code, message)`` over a command channel."""
    cls = _BY_CODE.get(code, StackmwError)
    if cls is SchemaError:
        return SchemaError(message, 0, 0)
    if issubclass(cls, ValidationError):
        err = cls.__new__(cls)
        StackmwError.__init__(err, message)
        err.report = []
        return err
    return cls(message)
