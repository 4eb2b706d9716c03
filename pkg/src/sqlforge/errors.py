"""Exception hierarchy shared across the pipeline stages."""


class SqlForgeError(Exception):
    pass


class ConfigError(SqlForgeError):
    pass


class PreconditionError(SqlForgeError, ValueError):
    pass


# gateway
class GatewayError(SqlForgeError):
    pass


class AuthError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ProviderError(GatewayError):
    pass


class DimensionMismatch(GatewayError):
    pass


# parsing / invariants
class ParseError(SqlForgeError):
    pass


class InvariantError(SqlForgeError):
    pass


class MaterializeError(SqlForgeError):
    pass


class EmptyDatabase(SqlForgeError):
    pass


class ColumnResolutionError(SqlForgeError):
    pass


class DatabaseAborted(SqlForgeError):
    """Too many consecutive generation failures for one database."""


class VoteFailed(SqlForgeError):
    pass


class GoldExecutionError(SqlForgeError):
    pass


class EmptyTally(SqlForgeError, ValueError):
    pass


# orchestration
class StageError(SqlForgeError):
    pass


class ConfigDrift(StageError):
    pass


class Interrupted(StageError):
    """Raised by the test hook that simulates a killed run."""
