from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from flmarket.core import constants


class TaskConfig(BaseModel):
    """Synthetic classification task: one Gaussian cluster per label, means on a circle."""
    label_count: int = Field(constants.LABEL_COUNT, ge=2)
    radius: float = Field(3.0, gt=0.0, description="Distance of the cluster means from the origin")
    spread: float = Field(1.0, gt=0.0, description="Per-axis standard deviation of each cluster")
    pool_per_label: int = Field(2000, ge=1, description="Training samples available per label")
    test_per_label: int = Field(100, ge=1, description="Label-balanced test samples per label")
    seed: int = 0

    model_config = ConfigDict(frozen=True)


class FedConfig(BaseModel):
    lr: float = Field(0.01, ge=0.0, description="eta")
    batch_size: int = Field(10, ge=1, description="delta_B")
    local_epochs: int = Field(constants.LOCAL_EPOCHS, ge=0, description="delta_l")
    global_epochs: int = Field(constants.GLOBAL_EPOCHS, ge=0, description="delta_g")
    sampled_workers: Optional[int] = Field(None, ge=1, description="delta_s; all workers when unset")
    loss: str = Field("cross_entropy", description="cross_entropy or mse")
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @field_validator("loss")
    @classmethod
    def check_loss(cls, loss):
        if loss not in ("cross_entropy", "mse"):
            raise ValueError(f"unknown loss {loss!r}")
        return loss


class GridSpec(BaseModel):
    """Cells of the (D, Delta) accuracy grid: every total data size with every label count."""
    data_sizes: List[int] = Field(default_factory=lambda: [20, 50, 100, 200, 500, 1000, 2000])
    labels_per_worker: List[int] = Field(default_factory=lambda: [1, 2, 4, 6, 8, 10])
    workers: int = Field(2, ge=1)
    seeds: int = Field(20, ge=1, description="Repetitions per cell")

    model_config = ConfigDict(frozen=True)


class FitResult(BaseModel):
    params: Dict[str, float] = Field(..., description="kappa1..kappa6 by name")
    fixed: List[str] = Field(default_factory=list)
    sse: float
    r_squared: float
    restarts: int
    successful_restarts: int
    alpha_range: Tuple[float, float] = Field(..., description="Fitted alpha over the grid's EMD values")

    model_config = ConfigDict(frozen=True)
