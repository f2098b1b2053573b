from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field


class GroupPartition(BaseModel):
    group_of: Dict[int, int] = Field(..., description="Owner id -> EMD group index in 1..G")
    virtual_emd: Dict[int, float] = Field(..., description="Group index -> interval midpoint EMD")
    width: float = Field(..., gt=0.0, description="EMD interval covered by each group")

    model_config = ConfigDict(frozen=True)

    def members(self, group: int) -> List[int]:
        return sorted(i for i, j in self.group_of.items() if j == group)


class OracleResult(BaseModel):
    best_set: List[int] = Field(default_factory=list)
    best_welfare: float = 0.0
    evaluated_count: int = 0

    model_config = ConfigDict(frozen=True)
