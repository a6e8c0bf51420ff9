"""Exception and warning types shared across morphkit."""


class MorphkitError(Exception):
    """Base class for all morphkit errors."""


class ParseError(MorphkitError):
    """A file could not be parsed; the message carries the offending line."""


class SchemaError(MorphkitError):
    """A file is syntactically valid but missing a required field."""


class DataError(MorphkitError):
    """A file contains invalid values (NaN, out-of-range); names the record."""


class IoError(MorphkitError):
    """A path could not be read or written."""


class ArgumentError(MorphkitError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConstraintError(MorphkitError):
    """A solve was requested without the constraints needed to pin it."""


class ProtocolError(MorphkitError):
    """A protocol message was malformed or referenced unknown state."""


class ConnectivityWarning(UserWarning):
    """The auxiliary graph is disconnected; components deform independently."""


class SingularSystemWarning(UserWarning):
    """A free subgraph has no handle; a minimum-norm solution was used."""


class BindingWarning(UserWarning):
    """Fewer reachable control nodes than requested; weights renormalized."""


class DegenerateBlendWarning(UserWarning):
    """A quaternion blend cancelled to zero; fell back to the dominant node."""
