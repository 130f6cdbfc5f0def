class DecodingError(Exception):
    """Base class for all package errors."""


class ConfigError(DecodingError, ValueError):
    pass


class CapacityError(DecodingError):
    """The KV cache would grow past ``max_seq_len``."""


class SelectionError(DecodingError, ValueError):
    pass


class RollbackError(DecodingError, ValueError):
    pass


class LosslessnessError(DecodingError):
    """Accelerated output diverged from plain dense greedy decoding."""
