from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from flmarket.core import constants
from flmarket.schemas.market import DataOwnerType

Range = Tuple[float, float]

SWEEP_KINDS = ["N", "d_max", "sigma_max", "G"]


class ScenarioConfig(BaseModel):
    """How random owner populations are drawn."""
    n_owners: int = Field(50, ge=0, description="Owners per instance N")
    gain_range: Range = Field((1e6, 1e7), description="Uniform range of the normalized channel gain h")
    data_range: Range = Field((0.0, constants.D_MAX), description="Uniform range of the data size d")
    emd_range: Range = Field((0.0, constants.SIGMA_MAX), description="Uniform range of the EMD sigma")
    data_cost_range: Range = Field((1e-5, 1e-4), description="Uniform range of gamma")
    compute_cost_range: Range = Field((1e-5, 1e-4), description="Uniform range of alpha")
    transmit_cost_range: Range = Field((1e-2, 1e-1), description="Uniform range of beta")
    channel_count_range: Tuple[int, int] = Field((2, 6), description="Inclusive uniform integer range of C_i")
    mean_channels: Optional[float] = Field(
        None, description="Optional override: C_i drawn as low + Binomial(high - low, p) with mean equal to this value"
    )
    channel_pool: int = Field(constants.CHANNEL_POOL_SIZE, ge=1, description="Channels are ids 1..channel_pool")
    train_count: int = Field(200, ge=0)
    validation_count: int = Field(20, ge=0)
    test_count: int = Field(1000, ge=0)

    model_config = ConfigDict(frozen=True)

    @field_validator("gain_range", "data_range", "emd_range", "data_cost_range",
                     "compute_cost_range", "transmit_cost_range")
    @classmethod
    def check_range(cls, value):
        low, high = value
        if low > high:
            raise ValueError(f"range {value} is empty")
        if low < 0:
            raise ValueError(f"range {value} must be nonnegative")
        return value

    @model_validator(mode="after")
    def check_channels(self):
        low, high = self.channel_count_range
        if low < 1 or low > high:
            raise ValueError(f"channel count range {self.channel_count_range} is empty")
        if high > self.channel_pool:
            raise ValueError(f"owners cannot request {high} channels from a pool of {self.channel_pool}")
        if self.gain_range[0] <= 0:
            raise ValueError("channel gains must be positive")
        if self.mean_channels is not None and not low <= self.mean_channels <= high:
            raise ValueError(f"mean channel count {self.mean_channels} outside {self.channel_count_range}")
        return self


class SweepSpec(BaseModel):
    kind: str = Field(..., description="Swept quantity: N, d_max, sigma_max or G")
    values: List[float] = Field(..., min_length=1)
    mechanisms: List[str] = Field(default_factory=lambda: [constants.MechanismNames.RMA])
    instances: int = Field(100, ge=1, description="Test instances per sweep value")
    seed: int = Field(..., description="Instance-set seed, recorded on every CSV row")

    @field_validator("kind")
    @classmethod
    def check_kind(cls, kind):
        if kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
        return kind

    @field_validator("mechanisms")
    @classmethod
    def check_mechanisms(cls, mechanisms):
        unknown = [m for m in mechanisms if m not in constants.MechanismNames.ALL]
        if unknown:
            raise ValueError(f"unknown mechanisms {unknown}")
        return mechanisms


class MarketInstance(BaseModel):
    """One owner population and the seed that reproduces it."""
    seed: int
    owners: List[DataOwnerType]

    @property
    def n_owners(self) -> int:
        return len(self.owners)
