"""Verifier-based filtering and difficulty-aware splitting of training samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

DEFAULT_BUDGET = 16

KPass = Union[int, str]


class Decision(str, enum.Enum):
    REJECT_TRIVIAL = "RejectTrivial"
    REJECT_UNVERIFIED = "RejectUnverified"
    ACCEPT_RFT = "AcceptRFT"
    ACCEPT_COLD_START = "AcceptColdStart"


def _parse_kpass(value: KPass) -> int | None:
    """``None`` encodes failure within the sampling budget."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text == "failed":
            return None
        value = int(text)
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"k_pass must be an integer or 'failed', got {value!r}")
    value = int(value)
    if value < 1:
        raise ValueError(f"k_pass must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class VerificationRecord:
    k_pass_without: KPass
    k_pass_with: KPass
    budget: int = DEFAULT_BUDGET

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be positive")
        _parse_kpass(self.k_pass_without)
        _parse_kpass(self.k_pass_with)


def classify_sample(rec: VerificationRecord) -> Decision:
    n = rec.budget
    without = _parse_kpass(rec.k_pass_without)
    with_flow = _parse_kpass(rec.k_pass_with)
    # a k_pass beyond the budget is indistinguishable from failure
    if without is not None and without > n:
        without = None
    if with_flow is not None and with_flow > n:
        with_flow = None

    # rows are checked in table order; the first matching row wins
    if without == 1:
        return Decision.REJECT_TRIVIAL
    if with_flow is None or with_flow > 1:
        return Decision.REJECT_UNVERIFIED
    if without is not None:
        return Decision.ACCEPT_RFT
    return Decision.ACCEPT_COLD_START
