from pydantic_settings import BaseSettings
from decouple import config
from functools import lru_cache


class Settings(BaseSettings):
    APP_NAME: str = config("APP_NAME", default="FL Services Market Simulator")
    ENVIRONMENT: str = config("ENVIRONMENT", default="development")

    # Logging
    LOG_LEVEL: str = config("LOG_LEVEL", default="INFO")
    LOG_DIR: str = config("LOG_DIR", default="logs")
    LOG_TO_FILE: bool = config("LOG_TO_FILE", default=False, cast=bool)

    # Parallel sweeps / property harness; 1 runs inline
    N_JOBS: int = config("N_JOBS", default=1, cast=int)

    # Exhaustive oracle guard
    ORACLE_MAX_OWNERS: int = config("ORACLE_MAX_OWNERS", default=20, cast=int)

    # Numerical tolerances
    PROPERTY_TOLERANCE: float = config("PROPERTY_TOLERANCE", default=1e-9, cast=float)
    PAYMENT_TOLERANCE: float = config("PAYMENT_TOLERANCE", default=1e-6, cast=float)

    # Trained-parameter files
    PARAMS_FORMAT_VERSION: str = config("PARAMS_FORMAT_VERSION", default="drla-params/1")

    @property
    def is_development(self) -> bool:
        return self.ENVIRONMENT == "development"


@lru_cache()
def get_settings() -> Settings:
    return Settings()
