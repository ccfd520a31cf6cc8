"""Exception types shared across the package."""


class AlbatrossError(Exception):
    """Base class for every error raised by this package."""


class DivisionByZero(AlbatrossError, ZeroDivisionError):
    pass


class KeyAgreementFailure(AlbatrossError, ValueError):
    pass


class InvalidCoordinate(AlbatrossError, ValueError):
    pass


class SentinelNotMappable(AlbatrossError, ValueError):
    pass


class ConfigError(AlbatrossError):
    pass


class StaleCounter(AlbatrossError):
    """A retrieval header carried a counter that was already consumed."""


class DecodeError(AlbatrossError):
    """A masked payload did not decode; the two ends disagree on the case."""


class ProtocolError(AlbatrossError):
    """Error reply from the relay server.

    ``code`` is one of the wire error codes (``NO_EDGE``, ``BAD_CTR``, ...).
    """

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
