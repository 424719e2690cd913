"""
Unit identifiers shared by every modality-aware module.
"""

from enum import Enum
from typing import NamedTuple


class Modality(str, Enum):
    REGION = "region"
    HOUR = "hour"
    KEYWORD = "keyword"
    USER = "user"


# Fixed order used by snapshots, vocab sidecars and table iteration
MODALITIES = (Modality.REGION, Modality.HOUR, Modality.KEYWORD, Modality.USER)


class UnitId(NamedTuple):
    modality: Modality
    index: int

    def __str__(self) -> str:
        return f"{self.modality.value}:{self.index}"
