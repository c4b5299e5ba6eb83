"""Exception hierarchy shared by every layer of the stack."""

from __future__ import annotations


class CiipError(Exception):
    """Base class for all protocol and configuration errors."""


class FrameError(CiipError):
    """A buffer could not be decoded; ``field`` names the offending field.

    Subclasses keep their data in ``args`` and format messages on demand:
    decoders reject frames in hot loops.
    """

    field = ""

    def __str__(self):
        return self.describe()

    def describe(self) -> str:
        return self.field


class Truncated(FrameError):
    """Args: ``(expected, actual, field)``."""

    expected = property(lambda self: self.args[0])
    actual = property(lambda self: self.args[1])
    field = property(lambda self: self.args[2] if len(self.args) > 2 else "size")

    def describe(self):
        return f"expected {self.expected} bytes, got {self.actual}"


class ChecksumMismatch(FrameError):
    """Args: ``(stored, computed)``."""

    field = "checksum"
    stored = property(lambda self: self.args[0])
    computed = property(lambda self: self.args[1])

    def describe(self):
        return f"stored checksum 0x{self.stored:04X} != computed 0x{self.computed:04X}"


class ReservedBitsSet(FrameError):
    """Args: ``(flags_byte,)``."""

    field = "flags"
    flags_byte = property(lambda self: self.args[0])

    def describe(self):
        return f"reserved flag bits set in 0x{self.flags_byte:02X}"


class PayloadTooLarge(CiipError):
    def __init__(self, length: int, limit: int = 255):
        super().__init__(f"payload of {length} bytes exceeds {limit}")
        self.length = length


# endpoint
class Busy(CiipError):
    """A send was strobed while the previous frame is still unacknowledged."""


class NotForMe(CiipError):
    pass


class UnexpectedAck(CiipError):
    pass


class NothingPending(CiipError):
    pass


# adapter
class DuplicateCid(CiipError):
    pass


class DuplicateAddress(CiipError):
    pass


class UnknownCid(CiipError):
    def __init__(self, cid: int):
        super().__init__(f"no mapping for cid {cid:08x}")
        self.cid = cid


class NotEndpointFrame(CiipError):
    pass


# registry
class UnknownDevice(CiipError):
    def __init__(self, cid: int):
        super().__init__(f"device {cid:08x} is not registered or was evicted")
        self.cid = cid


# netsim
class TimeRegression(CiipError):
    pass


# cli / daemons
class ConfigError(CiipError):
    pass


class BindError(CiipError):
    pass
