class MCPError(Exception):
    """Base class for every error raised by mcpsim"""


class WireError(MCPError, ValueError):
    """Raised by the wire codec when a byte sequence is not a valid packet"""


class NotMCP(WireError):
    pass


class Truncated(WireError):
    pass


class ReservedMode(WireError):
    pass


class BadPSN(WireError):
    pass


class StoppedConnection(MCPError, RuntimeError):
    """Sending on a connection that has been torn down"""


class InsufficientData(MCPError, ValueError):
    pass


class ChannelTooSmall(MCPError, ValueError):
    pass


class ConfigError(MCPError, ValueError):
    pass


class MismatchedScenarios(MCPError, ValueError):
    pass
