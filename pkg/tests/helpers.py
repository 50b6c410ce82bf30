"""Shared generators for round-trip, fuzz and batching tests."""

import numpy as np

from pflowlab.flow import PerceptualFlow, PerceptualState, PlanningState, _TAG_RE, normalize_roi

ALPHABET = list("abcdefghij klmnopqrstuvwxyz,.<>/[]0123456789") + ["é", "猫", "\n", "\t"]


def random_text(rng: np.random.Generator, lo: int = 1, hi: int = 30) -> str:
    while True:
        n = int(rng.integers(lo, hi + 1))
        text = "".join(rng.choice(ALPHABET, size=n)).strip()
        if text and not _TAG_RE.search(text):
            return text


def random_box(rng: np.random.Generator):
    x1, x2 = sorted(rng.choice(1001, size=2, replace=False))
    y1, y2 = sorted(rng.choice(1001, size=2, replace=False))
    return normalize_roi([int(x1), int(y1), int(x2), int(y2)])


def random_flow(rng: np.random.Generator, max_k: int = 6, K: int | None = None) -> PerceptualFlow:
    if K is None:
        K = int(rng.integers(0, max_k + 1))
    states = tuple(PerceptualState(random_box(rng), random_text(rng)) for _ in range(K))
    terminated = bool(rng.integers(0, 4)) or K == 0
    suffix = ""
    if terminated and rng.random() < 0.5:
        suffix = f"<thinking>{random_text(rng)}</thinking><answer>{random_text(rng, 1, 5)}</answer>"
    return PerceptualFlow(PlanningState(random_text(rng)), states, terminated, suffix)
