"""Bundled example environments and a seeded random generator."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .env import EnvSpec
from .flow import normalize_roi

BUNDLED = ("t1", "r1", "r2")


def t1_env() -> EnvSpec:
    """Two-box world with s_v = 0.5 and s_b = 0.25 at eps = 0.5.

    Bag 0 hugs the expert set, bag 1 is valid but loose, bag 2 gets one box
    wrong and bag 3 misses entirely. Answer likelihoods 0.4/0.4/0.6/0.2 give
    posterior bag masses 0.25/0.25/0.375/0.125.
    """
    boxes = [
        [120, 120, 390, 390], [620, 620, 890, 890],
        [50, 80, 420, 430], [560, 600, 950, 930],
        [100, 100, 400, 400], [100, 600, 400, 900],
        [600, 100, 900, 400], [0, 0, 200, 300],
    ]
    rows = [
        [0.7, 0.3], [0.5, 0.5], [0.8, 0.2], [0.6, 0.4],
        [0.9, 0.1], [0.65, 0.35], [0.55, 0.45], [0.75, 0.25],
    ]
    return EnvSpec(
        caption_space=("a red cup on the table", "a folded napkin"),
        candidates=tuple(normalize_roi(b) for b in boxes),
        bags=((0, 1), (2, 3), (4, 5), (6, 7)),
        golden=(normalize_roi([100, 100, 400, 400]), normalize_roi([600, 600, 900, 900])),
        expert=(normalize_roi([130, 130, 370, 370]), normalize_roi([630, 630, 870, 870])),
        sigma=0.4,
        caption_likelihood=np.array(rows),
        answer_likelihood=np.array([0.4, 0.4, 0.6, 0.2]),
        planning_text="Find the cup and the napkin next to it.",
        input_id="t1",
    )


def _jitter(rng: np.random.Generator, box: list[int], scale: int) -> list[int]:
    while True:
        d = rng.integers(-scale, scale + 1, size=4)
        x1, y1, x2, y2 = (int(v) for v in np.clip(np.array(box) + d, 0, 1000))
        if x2 - x1 >= 20 and y2 - y1 >= 20:
            return [x1, y1, x2, y2]


def random_env(
    seed: int,
    K: int = 2,
    M: int = 5,
    n_captions: int = 3,
    sigma: float = 0.45,
) -> EnvSpec:
    """Random world: bags are jittered copies of a golden set at rising noise levels."""
    rng = np.random.default_rng(seed)
    golden: list[list[int]] = []
    while len(golden) < K:
        x, y = (int(v) for v in rng.integers(0, 700, size=2))
        w, h = (int(v) for v in rng.integers(120, 300, size=2))
        golden.append([x, y, min(x + w, 1000), min(y + h, 1000)])
    expert = [_jitter(rng, g, 25) for g in golden]

    candidates: list[list[int]] = []
    bags = []
    for m in range(M):
        scale = 20 + int(300 * m / max(M - 1, 1))
        bag = []
        for g in golden:
            box = _jitter(rng, g, scale)
            while box in candidates:
                box = _jitter(rng, g, scale)
            candidates.append(box)
            bag.append(len(candidates) - 1)
        bags.append(tuple(bag))

    rows = rng.dirichlet(np.ones(n_captions) * 2.0, size=len(candidates))
    rows = np.maximum(rows, 0.02)
    rows /= rows.sum(axis=1, keepdims=True)
    answer = np.round(rng.uniform(0.1, 0.95, size=M), 3)
    return EnvSpec(
        caption_space=tuple(f"caption {chr(ord('a') + j)}" for j in range(n_captions)),
        candidates=tuple(normalize_roi(b) for b in candidates),
        bags=tuple(bags),
        golden=tuple(normalize_roi(g) for g in golden),
        expert=tuple(normalize_roi(e) for e in expert),
        sigma=sigma,
        caption_likelihood=rows,
        answer_likelihood=answer,
        planning_text=f"Inspect the {K} regions relevant to question {seed}.",
        input_id=f"random-{seed}",
    )


def r1_env() -> EnvSpec:
    return random_env(seed=1, K=2, M=5, n_captions=3)


def r2_env() -> EnvSpec:
    return random_env(seed=4, K=3, M=4, n_captions=2, sigma=0.5)


def bundled_env(name: str) -> EnvSpec:
    """Load a bundled env JSON shipped with the package (``t1``, ``r1``, ``r2``)."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled env {name!r}; choose from {BUNDLED}")
    text = resources.files("pflowlab.data").joinpath(f"{name}.json").read_text()
    return EnvSpec.from_json(json.loads(text))


def bundled_env_path(name: str):
    return resources.files("pflowlab.data").joinpath(f"{name}.json")
