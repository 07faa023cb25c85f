class ObfairError(Exception):
    """Base class for toolkit errors."""


class ManifestError(ObfairError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PluginTransportError(ObfairError):
    """Plugin crashed, hung or closed its pipes. Safe to retry with a fresh process."""

    retriable = True


class PluginProtocolError(ObfairError):
    """Plugin answered, but the answer violates the wire contract."""

    retriable = False


class ConfigError(ObfairError):
    pass


class StageError(ObfairError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
