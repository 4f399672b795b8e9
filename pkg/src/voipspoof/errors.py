"""Exception hierarchy shared by every layer of the stack."""


class VoipSpoofError(Exception):
    """Base class for all errors raised by this package."""


# codec profiles
class UnknownCodec(VoipSpoofError, KeyError):
    pass


# SIP
class MalformedUri(VoipSpoofError, ValueError):
    pass


class NoCommonCodec(VoipSpoofError):
    pass


class IntegrityFailure(VoipSpoofError):
    """The OK message's keyed tag does not match its SDP endpoint."""


class MissingSdp(VoipSpoofError):
    pass


class MissingDialogState(VoipSpoofError):
    pass


class ParseError(VoipSpoofError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


# dummy host selection
class ScannerUnavailable(VoipSpoofError):
    pass


class NoCandidate(VoipSpoofError):
    pass


class NotAssigned(VoipSpoofError):
    pass


class PathUnknown(VoipSpoofError):
    pass


# FEC multiplexer
class ReservedTask(VoipSpoofError, ValueError):
    pass


# RTP transport
class EmptyKey(VoipSpoofError, ValueError):
    pass


class SizeMismatch(VoipSpoofError, ValueError):
    pass


class AuthFailure(VoipSpoofError):
    pass


class ReplayDetected(VoipSpoofError):
    pass


class SpoofingUnsupported(VoipSpoofError):
    pass


# spoofer
class DecryptFailure(VoipSpoofError):
    pass


class MalformedRecord(VoipSpoofError, ValueError):
    pass


class UnknownCallee(VoipSpoofError):
    pass


class NoSession(VoipSpoofError):
    pass


class DuplicateTask(VoipSpoofError):
    pass


class FetchFailure(VoipSpoofError):
    pass


# client
class SessionTimeout(VoipSpoofError, TimeoutError):
    pass


class GatewayTimeout(VoipSpoofError):
    """Maps to HTTP 504 at the client proxy."""


class UnrecoverableGap(VoipSpoofError):
    pass


# simulator / CLI
class UnknownEndpoint(VoipSpoofError, KeyError):
    pass


class BadScenario(VoipSpoofError, ValueError):
    pass


class BadFixture(VoipSpoofError, ValueError):
    pass
