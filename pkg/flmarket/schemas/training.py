from typing import FrozenSet, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from flmarket.core import constants


class DrlaHyperParams(BaseModel):
    """Network shape; stored in the header of every parameter file."""
    embedding_dim: int = Field(constants.EMBEDDING_DIM, ge=1, description="GCN width")
    gcn_layers: int = Field(constants.GCN_LAYERS, ge=1)
    monotone_groups: int = Field(constants.MONOTONE_GROUPS, ge=1, description="J")
    monotone_units: int = Field(constants.MONOTONE_UNITS, ge=1, description="K")
    channel_scale: float = Field(constants.CHANNEL_FEATURE_SCALE, gt=0.0)
    gain_scale: float = Field(constants.GAIN_FEATURE_SCALE, gt=0.0)

    model_config = ConfigDict(frozen=True)

    @property
    def feature_dim(self) -> int:
        # node embedding, graph embedding, selection state, channel count, gain
        return 2 * self.embedding_dim + 3


class TrainConfig(BaseModel):
    episodes: int = Field(200, ge=1, description="L1")
    max_steps: int = Field(0, ge=0, description="L2; 0 means the owner count")
    n_step: int = Field(2, ge=1, description="mu_u, n-step reward horizon")
    target_reset: int = Field(10, ge=1, description="mu_r, episodes between target-network resets")
    batch_size: int = Field(128, ge=1, description="mu_B")
    discount: float = Field(0.99, gt=0.0, le=1.0, description="lambda")
    replay_capacity: int = Field(50_000, ge=1)
    epsilon_start: float = Field(0.9, ge=0.0, le=1.0)
    epsilon_end: float = Field(0.05, ge=0.0, le=1.0)
    anneal_episodes: int = Field(0, ge=0, description="Episodes to anneal epsilon over; 0 means all episodes")
    lr: float = Field(1e-3, gt=0.0)
    grad_clip: float = Field(10.0, ge=0.0, description="Global gradient-norm cap; 0 disables")
    updates_per_step: int = Field(1, ge=0)
    validate_every: int = Field(5, ge=1)
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_schedule(self):
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon must not increase over training")
        return self

    def epsilon(self, episode: int) -> float:
        """Linear schedule from epsilon_start to epsilon_end, flat afterwards."""
        span = self.anneal_episodes or self.episodes
        if span <= 1:
            return self.epsilon_end
        fraction = min(1.0, episode / (span - 1))
        return self.epsilon_start + fraction * (self.epsilon_end - self.epsilon_start)


class Experience(BaseModel):
    """One n-step transition; `instance` keys the training feature store."""
    instance: int = Field(..., ge=0)
    state: FrozenSet[int]
    action: int = Field(..., ge=0)
    rewards: Tuple[float, ...] = Field(..., min_length=1, description="Per-step rewards summed into `reward`")
    reward: float
    next_state: FrozenSet[int]
    next_actions: Tuple[int, ...] = Field(default_factory=tuple, description="Feasible actions at next_state")
    terminal: bool = False

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_reward(self):
        if abs(sum(self.rewards) - self.reward) > 1e-9:
            raise ValueError(f"reward {self.reward} is not the sum of its steps {self.rewards}")
        return self
