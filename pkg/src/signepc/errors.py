class SignEpcError(Exception):
    """Base class for all library errors."""


class MalformedEpc(SignEpcError, ValueError):
    pass


class TimestampCollision(SignEpcError):
    pass


class OwnerNotPublished(SignEpcError, LookupError):
    pass


class BadSignature(SignEpcError):
    pass


class UnknownKeyId(SignEpcError, LookupError):
    pass


class WeakKeyRequested(SignEpcError, ValueError):
    pass


class ChallengeConsumed(SignEpcError):
    pass


class ChallengeExpired(SignEpcError):
    pass


class NoGrant(SignEpcError):
    pass


class UnknownEpc(SignEpcError, LookupError):
    pass


class ConfigInvalid(SignEpcError, ValueError):
    """Scenario or simulation configuration failed validation.

    ``line`` is the 1-based line in the source file when known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if path:
            prefix += f"{path}: "
        super().__init__(prefix + message)
