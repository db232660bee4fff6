import logging
import os
from typing import Optional, Tuple

from .Constants import DEFAULT_CLAMP_HI, DEFAULT_CLAMP_LO
from .Errors import ConfigurationError

logger = logging.getLogger(__name__)


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"Environment variable {name}={raw!r} is not a number.")


class Context:
    """
    Process-wide runtime settings. Values set explicitly (CLI flags, config files) win over the
    environment, which wins over the built-in defaults.
    """

    def __init__(self):
        self._threads: Optional[int] = None
        self._clamp: Optional[Tuple[float, float]] = None

    @property
    def threads(self) -> int:
        if self._threads is not None:
            return self._threads
        raw = os.getenv("AIPW_GMM_THREADS")
        if raw:
            try:
                value = int(raw)
            except ValueError:
                raise ConfigurationError(f"AIPW_GMM_THREADS={raw!r} is not an integer.")
            if value >= 1:
                return value
            logger.warning(f"Ignoring AIPW_GMM_THREADS={raw}; it must be at least 1.")
        return 1

    @threads.setter
    def threads(self, value: Optional[int]) -> None:
        if value is not None and value < 1:
            raise ConfigurationError("threads must be at least 1.")
        self._threads = value

    @property
    def clamp_bounds(self) -> Tuple[float, float]:
        if self._clamp is not None:
            return self._clamp
        bounds = (
            _env_float("AIPW_GMM_CLAMP_LO", DEFAULT_CLAMP_LO),
            _env_float("AIPW_GMM_CLAMP_HI", DEFAULT_CLAMP_HI),
        )
        check_clamp_bounds(bounds)
        return bounds

    @clamp_bounds.setter
    def clamp_bounds(self, value: Optional[Tuple[float, float]]) -> None:
        if value is not None:
            check_clamp_bounds(value)
        self._clamp = None if value is None else (float(value[0]), float(value[1]))

    def reset(self) -> None:
        self._threads = None
        self._clamp = None


def check_clamp_bounds(bounds: Tuple[float, float]) -> None:
    lo, hi = bounds
    if not (0.0 < lo < hi <= 1.0):
        raise ConfigurationError(f"Clamp bounds must satisfy 0 < lo < hi <= 1, got ({lo}, {hi}).")


context: Context = Context()
