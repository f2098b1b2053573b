from typing import Any, Dict, Optional


class MarketError(Exception):
    """Base class for every error raised by the market simulator."""
    pass


class InvalidInputError(MarketError, ValueError):
    """Malformed arguments to a pure kernel (shape or length mismatch, out-of-range values)."""
    pass


class ConfigurationError(MarketError):
    """A config file or override could not be mapped onto a config record."""
    pass


class InstanceFormatError(MarketError):
    """An instance file does not follow the line-oriented instance format."""
    pass


class ParamsFormatError(MarketError):
    """A trained-parameter file is missing its header or does not match the network."""
    pass


class OracleCapacityError(MarketError):
    """The exhaustive oracle refuses instances above its owner limit."""
    def __init__(self, n_owners: int, limit: int):
        self.n_owners = n_owners
        self.limit = limit
        super().__init__(f"Exhaustive oracle supports at most {limit} owners, got {n_owners}")


class OracleViolationError(MarketError):
    """The supplied mechanism's win predicate is not monotone in the owner's bid."""
    def __init__(self, message: str, owner_id: Optional[int] = None):
        self.owner_id = owner_id
        super().__init__(f"[owner {owner_id}] {message}" if owner_id is not None else message)


class FitFailureError(MarketError):
    """Every restart of the quality-curve fit failed."""
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class TrainingDivergenceError(MarketError):
    """The DRLA training loss became non-finite."""
    def __init__(self, episode: int, loss: float):
        self.episode = episode
        self.loss = loss
        super().__init__(f"Training diverged at episode {episode} (loss={loss})")
