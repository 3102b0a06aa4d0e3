"""Exception types shared across the package."""


class NoteprobeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NoteprobeError):
    """Input or invariant violation: bad data, bad config, incomplete runs."""


class ParseError(ValidationError):
    """A file could not be parsed; the message carries path and line number."""


class ProtocolError(NoteprobeError):
    """A model endpoint violated the wire protocol (schema, ranges, ordering)."""


class TransportError(NoteprobeError):
    """A model endpoint was unreachable or failed after all retries."""


class CohortExclusion(Exception):
    """Signal, not a failure: a sample cannot be rewritten into some test group
    and must be dropped from every group of the characteristic.

    Deliberately not a NoteprobeError so it is never swallowed by generic
    error handling.
    """
