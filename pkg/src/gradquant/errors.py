"""Exception types shared across the package."""


class ProtocolError(RuntimeError):
    """Worker/server disagreement: configs, dither coordinates, or round counters."""


class DecodeError(ValueError):
    """Malformed, truncated, or inconsistent serialized payload."""


class ConfigError(ValueError):
    """Invalid experiment or CLI configuration."""


class TrainingDiverged(RuntimeError):
    """An optimizer step received a non-finite gradient."""
