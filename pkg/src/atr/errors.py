"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``InputError`` (and subclasses) exit 2,
``ScorerError`` (and subclasses) exit 3.
"""


class InputError(Exception):
    """Invalid user input: bad files, violated invariants, unknown ids."""


class SequenceLengthError(InputError):
    """Assembled scorer input exceeds the configured token budget."""


class ScorerError(Exception):
    """Failure on the scorer side of the contract."""


class TransportError(ScorerError):
    """The remote scorer could not be reached after bounded retries."""


class ProtocolError(ScorerError):
    """The remote scorer answered, but the response violates the protocol."""
