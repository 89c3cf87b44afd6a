"""Exception hierarchy shared by every r2f subsystem."""


class R2FError(Exception):
    """Base class for all library errors."""


class ShapeError(R2FError, ValueError):
    """Tensor or topology mismatch, tagged with the offending layer index."""

    def __init__(self, message, layer=None, dims=None):
        self.layer = layer
        self.dims = dims
        self.message = message
        super().__init__(self._render())

    def _render(self):
        where = "input" if self.layer is None else f"layer {self.layer}"
        text = f"{where}: {self.message}"
        if self.dims is not None:
            text += f" (dims {self.dims})"
        return text

    def at_layer(self, layer):
        """Return a copy attributed to ``layer`` (keeps an existing attribution)."""
        if self.layer is not None:
            return self
        return ShapeError(self.message, layer=layer, dims=self.dims)


class DecodeError(R2FError, ValueError):
    """Malformed wire data. ``reason`` is a short machine-readable tag."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ProtocolError(R2FError):
    """A peer sent a message that is invalid in the current session state."""


class TransportError(R2FError):
    """Connection-level failure; ``retriable`` tells the runtime whether to reconnect."""

    def __init__(self, message, retriable=True):
        self.retriable = retriable
        super().__init__(message)


class TrainingError(R2FError):
    """Numerical failure during an update (non-finite gradients)."""


class ConfigError(R2FError, ValueError):
    """Invalid configuration key or value."""
