"""Bootstrap split plan schema."""

from typing import Tuple

from pydantic import BaseModel, ConfigDict, model_validator


class SplitPlan(BaseModel):
    """Partition of the site ids of one bootstrap run."""

    model_config = ConfigDict(frozen=True)

    run_id: int
    seed: int
    train_site_ids: Tuple[str, ...]
    regular_site_ids: Tuple[str, ...]
    site_test_site_ids: Tuple[str, ...]

    @model_validator(mode="after")
    def _disjoint(self) -> "SplitPlan":
        train, regular, site = map(set, (self.train_site_ids, self.regular_site_ids, self.site_test_site_ids))
        if train & regular or train & site or regular & site:
            raise ValueError("site partitions must be pairwise disjoint")
        return self

    @property
    def all_site_ids(self) -> Tuple[str, ...]:
        return self.train_site_ids + self.regular_site_ids + self.site_test_site_ids
