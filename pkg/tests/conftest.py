import numpy as np
import pytest

from pflowlab.env import EnvSpec
from pflowlab.flow import normalize_roi
from pflowlab.worlds import r1_env, r2_env, t1_env


def grid_box(x1, y1, x2, y2):
    return normalize_roi([x1, y1, x2, y2])


def make_env(bags, rows, answers, boxes=None, golden=None, expert=None, sigma=0.5, captions=None):
    """Small hand-built env; boxes default to disjoint tiles along the diagonal."""
    n = 1 + max(i for b in bags for i in b)
    if boxes is None:
        boxes = [grid_box(100 * i, 100 * i, 100 * i + 80, 100 * i + 80) for i in range(n)]
    rows = np.asarray(rows, dtype=float)
    if captions is None:
        captions = tuple(f"cap {j}" for j in range(rows.shape[1]))
    first = [boxes[i] for i in bags[0]]
    return EnvSpec(
        caption_space=captions,
        candidates=tuple(boxes),
        bags=tuple(tuple(b) for b in bags),
        golden=tuple(golden or first),
        expert=tuple(expert or first),
        sigma=sigma,
        caption_likelihood=rows,
        answer_likelihood=np.asarray(answers, dtype=float),
        planning_text="look",
    )


@pytest.fixture(scope="session")
def t1():
    return t1_env()


@pytest.fixture(scope="session")
def envs():
    return {"t1": t1_env(), "r1": r1_env(), "r2": r2_env()}
