"""Exception types raised across the package."""


class XrayBagError(Exception):
    """Base class for all package errors."""


class OutOfBounds(XrayBagError, ValueError):
    pass


class EmptyAxis(XrayBagError, ValueError):
    pass


class PlacementOverflow(XrayBagError, RuntimeError):
    pass


class DimMismatch(XrayBagError, ValueError):
    pass


class EmptyMask(XrayBagError, ValueError):
    pass


class EmptyText(XrayBagError, ValueError):
    pass


class InvalidBox(XrayBagError, ValueError):
    pass


class ParseError(XrayBagError, ValueError):
    """Malformed box-token string. ``offset`` is the UTF-8 byte offset of the offending character."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class MissingBox(XrayBagError, ValueError):
    pass


class FormatError(XrayBagError, ValueError):
    pass


class IdMismatch(XrayBagError, KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        shown = ", ".join(self.ids[:20])
        more = "" if len(self.ids) <= 20 else f" (+{len(self.ids) - 20} more)"
        super().__init__(f"unknown ids: {shown}{more}")


class IoFailure(XrayBagError, OSError):
    pass


# endpoint client errors


class EndpointError(XrayBagError):
    pass


class AuthMissing(EndpointError):
    pass


class Timeout(EndpointError):
    pass


class HttpStatus(EndpointError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code


class RateLimited(HttpStatus):
    def __init__(self, body: str = ""):
        super().__init__(429, body)
