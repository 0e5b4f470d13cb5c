"""Exception hierarchy shared across the package."""


class NormsGameError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NormsGameError):
    """A config value or population shape violates a documented invariant."""


class WrongRegimeError(NormsGameError):
    """An operation received records from the other evolutionary regime."""


class BackendFailure(NormsGameError):
    """An agent backend could not produce an utterance (engine applies fallback)."""


class GatewayError(NormsGameError):
    """A model/embedding service call failed permanently."""


class TransportError(GatewayError):
    """All retry attempts against the service were exhausted."""


class FixtureMissingError(GatewayError):
    """Replay mode found no recorded fixture for a request hash."""

    def __init__(self, digest: str):
        super().__init__(f"no recorded fixture for request hash {digest}")
        self.digest = digest


class LogFormatError(NormsGameError):
    """A run log line could not be decoded."""

    def __init__(self, path: str, line_number: int, reason: str):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number
