from typing import List

from pydantic import BaseModel, Field


class PropertyReport(BaseModel):
    """Outcome of one property check over a set of instances."""
    check: str = Field(..., description="ir, ic_bid, ic_quality, criticality, feasibility or accounting")
    mechanism: str
    instances: int = Field(0, ge=0)
    trials: int = Field(0, ge=0)
    failures: int = Field(0, ge=0)
    worst_violation: float = Field(0.0, ge=0.0)
    cross_group_trials: int = Field(0, ge=0, description="EMD misreports that moved the owner to another RMA group")
    seeds: List[int] = Field(default_factory=list, description="Seeds of the instances with failures")

    @property
    def passed(self) -> bool:
        return self.failures == 0
