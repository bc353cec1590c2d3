"""Exception types shared across the package."""


class DfedsimError(Exception):
    """Base class for all errors raised by dfedsim."""


class TopologyError(DfedsimError):
    """Invalid graph parameters or a graph that cannot be made connected."""


class DivergenceError(DfedsimError):
    """Parameters or losses became non-finite.

    ``round`` and ``step`` are filled in by the caller that knows them.
    """

    def __init__(self, message: str, round: int | None = None, step: int | None = None, client: int | None = None):
        self.round = round
        self.step = step
        self.client = client
        where = [f"{name}={val}" for name, val in (("round", round), ("client", client), ("step", step)) if val is not None]
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))


class ConfigError(DfedsimError):
    """A configuration key is unknown, mistyped, or violates a constraint."""

    def __init__(self, message: str, key: str | None = None, location: str | None = None):
        self.key = key
        self.location = location
        prefix = f"{location}: " if location else ""
        super().__init__(prefix + message)
