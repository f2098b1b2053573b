import math
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from flmarket.core import constants


class LabelDistribution(BaseModel):
    probs: Tuple[float, ...] = Field(..., description="Per-label probabilities, one entry per label")

    model_config = ConfigDict(frozen=True)

    @field_validator("probs")
    @classmethod
    def check_probabilities(cls, probs):
        if len(probs) == 0:
            raise ValueError("label distribution needs at least one label")
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("label probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"label probabilities must sum to 1 (got {sum(probs)})")
        return probs

    @property
    def label_count(self) -> int:
        return len(self.probs)


class DataOwnerType(BaseModel):
    """One bidder: the reported type plus the private unit costs the simulator knows."""
    owner_id: int = Field(..., ge=0, description="Owner id, unique within an instance")
    bid: float = Field(..., description="Reported bid b")
    data_size: float = Field(..., ge=0.0, description="Local data size d")
    emd: float = Field(..., ge=0.0, description="Earth mover's distance sigma of the local labels")
    channels: FrozenSet[int] = Field(..., description="Requested channel ids")
    channel_gain: float = Field(..., gt=0.0, description="Normalized channel power gain h")
    unit_data_cost: float = Field(0.0, ge=0.0, description="gamma, cost per data unit")
    unit_compute_cost: float = Field(0.0, ge=0.0, description="alpha, compute cost per data unit")
    unit_transmit_cost: float = Field(0.0, ge=0.0, description="beta, transmit energy cost")

    model_config = ConfigDict(frozen=True)

    @field_validator("channels")
    @classmethod
    def check_channels(cls, channels):
        if len(channels) == 0:
            raise ValueError("an owner must request at least one channel")
        return frozenset(channels)

    @property
    def channel_count(self) -> int:
        return len(self.channels)


class MarketConfig(BaseModel):
    kappa1: float = Field(constants.KAPPA_1, gt=0.0)
    kappa2: float = Field(constants.KAPPA_2, gt=0.0)
    kappa3: float = Field(constants.KAPPA_3, gt=0.0)
    kappa4: float = Field(constants.KAPPA_4, gt=0.0)
    kappa5: float = Field(constants.KAPPA_5, gt=0.0)
    kappa6: float = Field(constants.KAPPA_6, gt=0.0)
    kappa7: float = Field(constants.KAPPA_7, gt=0.0, description="Profit per unit of model quality")
    sigma_max: float = Field(constants.SIGMA_MAX, gt=0.0, description="Worst EMD the platform accepts")
    d_max: float = Field(constants.D_MAX, gt=0.0, description="Largest local data size")
    groups: int = Field(constants.RMA_GROUPS, ge=1, description="RMA EMD group count G")
    local_epochs: int = Field(constants.LOCAL_EPOCHS, ge=0)
    global_epochs: int = Field(constants.GLOBAL_EPOCHS, ge=0)
    model_size: float = Field(constants.MODEL_SIZE, ge=0.0, description="Model size M")
    bandwidth: float = Field(constants.CHANNEL_BANDWIDTH_HZ, gt=0.0, description="Per-channel bandwidth B (Hz)")
    rate: float = Field(constants.REQUIRED_RATE_BPS, gt=0.0, description="Required uplink rate R (bit/s)")
    platform_compute_cost: float = Field(constants.PLATFORM_UNIT_COMPUTE_COST, ge=0.0)
    platform_transmit_cost: float = Field(constants.PLATFORM_UNIT_TRANSMIT_COST, ge=0.0)
    n_owners: int = Field(50, ge=0)
    channel_pool: int = Field(constants.CHANNEL_POOL_SIZE, ge=1, description="Channels are ids 1..channel_pool")
    label_count: int = Field(constants.LABEL_COUNT, ge=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_alpha_below_one(self):
        # alpha(Delta) peaks at Delta = 0 on the admissible range
        bound = math.exp((self.kappa5 / self.kappa6) ** 2)
        if self.kappa4 >= bound:
            raise ValueError(
                f"kappa4={self.kappa4} must be below exp((kappa5/kappa6)^2)={bound:.6f} "
                "so that alpha(Delta) < 1"
            )
        return self

    @property
    def group_width(self) -> float:
        return self.sigma_max / self.groups


class AuctionOutcome(BaseModel):
    winners: FrozenSet[int] = Field(default_factory=frozenset)
    payments: Dict[int, float] = Field(default_factory=dict, description="Payment per owner id, zero for losers")
    social_welfare: float = 0.0
    mechanism: str = ""
    group_of: Dict[int, int] = Field(default_factory=dict, description="RMA group of each winner")
    payment_branch: Dict[int, str] = Field(default_factory=dict)
    seed: Optional[int] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_loser_payments(self):
        for owner_id, payment in self.payments.items():
            if owner_id not in self.winners and payment != 0.0:
                raise ValueError(f"owner {owner_id} lost but is paid {payment}")
        return self

    @property
    def worker_count(self) -> int:
        return len(self.winners)

    def payment(self, owner_id: int) -> float:
        return self.payments.get(owner_id, 0.0)

    def sorted_winners(self) -> List[int]:
        return sorted(self.winners)
