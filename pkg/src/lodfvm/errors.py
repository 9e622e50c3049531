class ConfigurationError(ValueError):
    """Invalid geometry, solver or pipeline configuration."""


class PipelineProtocolError(RuntimeError):
    """A frontier message was missing, late, or arrived out of order."""
