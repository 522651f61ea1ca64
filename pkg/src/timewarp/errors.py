"""Exception types shared across the engine."""


class ConfigError(ValueError):
    """Invalid run configuration or config file contents."""


class TransportError(RuntimeError):
    """Message delivery failure: unknown receiver, connection loss, bad frame."""


class ProtocolError(RuntimeError):
    """Fatal synchronization-protocol violation (e.g. GVT regression,
    rollback below GVT).  Indicates an engine bug, never a model bug."""


class ModelError(RuntimeError):
    """A user model callback raised; aborts the run."""
