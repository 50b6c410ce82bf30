"""Shared-prefix batch plans for scoring every prefix probe of a flow in one pass.

The flat sequence is the shared flow ``z_0 .. z_K`` followed by one probe segment
per cut point ``i = 0..K`` in increasing ``i``. A probe attends to the flow up to
the end of ``z_i`` and causally to itself, never to another probe, and its
position ids resume right after its cut point as if it followed ``z_{0:i}``
directly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .flow import PerceptualFlow, to_grid

# toy tokenizer vocabulary
ANALYZE_OPEN, ANALYZE_CLOSE, LOCALIZE_OPEN, BOX, TERMINAL = 1, 2, 3, 4, 5
PAD = 0
BYTE_BASE = 16
COORD_BASE = 300


def _text_tokens(text: str) -> list[int]:
    return [BYTE_BASE + b for b in text.encode("utf-8")]


def tokenize_flow(flow: PerceptualFlow) -> list[list[int]]:
    """Token segments for ``z_0, z_1, .., z_K``; injective on flows."""
    segs = [[ANALYZE_OPEN, *_text_tokens(flow.planning.text), ANALYZE_CLOSE, LOCALIZE_OPEN]]
    for s in flow.states:
        coords = [COORD_BASE + to_grid(v) for v in s.roi.as_tuple()]
        segs.append([BOX, *coords, *_text_tokens(s.caption)])
    return segs


def tokenize_answer(y: Union[str, Sequence[int]]) -> list[int]:
    if isinstance(y, str):
        return _text_tokens(y)
    return [int(t) for t in y]


@dataclass
class BatchPlan:
    tokens: np.ndarray
    position_ids: np.ndarray
    mask: np.ndarray
    probe_spans: dict[int, tuple[int, int]]
    cut_points: dict[int, int]
    prefix_len: int
    kind: str = "terminal"

    def copy(self) -> "BatchPlan":
        return BatchPlan(
            self.tokens.copy(), self.position_ids.copy(), self.mask.copy(),
            dict(self.probe_spans), dict(self.cut_points), self.prefix_len, self.kind,
        )

    def stats(self) -> dict:
        probe_tokens = sum(e - s for s, e in self.probe_spans.values())
        naive_prefix = sum(c + 1 for c in self.cut_points.values())
        return {
            "plan_tokens": int(len(self.tokens)),
            "plan_prefix_tokens": int(self.prefix_len),
            "naive_tokens": int(naive_prefix + probe_tokens),
            "naive_prefix_tokens": int(naive_prefix),
            "probes": len(self.probe_spans),
        }

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "tokens": self.tokens.tolist(),
            "position_ids": self.position_ids.tolist(),
            "mask": "".join("1" if v else "0" for v in self.mask.ravel()),
            "size": int(len(self.tokens)),
            "probe_spans": {str(k): list(v) for k, v in self.probe_spans.items()},
            "cut_points": {str(k): v for k, v in self.cut_points.items()},
            "stats": self.stats(),
        }


def _plan(flow: PerceptualFlow, probe: list[int], kind: str) -> BatchPlan:
    segs = tokenize_flow(flow)
    prefix = [t for seg in segs for t in seg]
    P = len(prefix)
    ends = np.cumsum([len(s) for s in segs]) - 1
    n_probes = len(segs)
    N = P + n_probes * len(probe)

    tokens = np.empty(N, dtype=np.int64)
    pos = np.empty(N, dtype=np.int64)
    mask = np.zeros((N, N), dtype=bool)
    tokens[:P] = prefix
    pos[:P] = np.arange(P)
    mask[:P, :P] = np.tril(np.ones((P, P), dtype=bool))

    spans: dict[int, tuple[int, int]] = {}
    cuts: dict[int, int] = {}
    start = P
    for i in range(n_probes):
        cut = int(ends[i])
        end = start + len(probe)
        tokens[start:end] = probe
        pos[start:end] = cut + 1 + np.arange(len(probe))
        mask[start:end, : cut + 1] = True
        mask[start:end, start:end] = np.tril(np.ones((len(probe), len(probe)), dtype=bool))
        spans[i] = (start, end)
        cuts[i] = cut
        start = end
    return BatchPlan(tokens, pos, mask, spans, cuts, P, kind)


def plan_terminal_probes(flow: PerceptualFlow) -> BatchPlan:
    """One single-token terminal probe per prefix ``z_{0:i}``."""
    return _plan(flow, [TERMINAL], "terminal")


def plan_efficacy_probes(flow: PerceptualFlow, y) -> BatchPlan:
    """One copy of the answer tokens per prefix ``z_{0:i}``."""
    return _plan(flow, tokenize_answer(y), "efficacy")


@dataclass(frozen=True)
class MockScorer:
    """Deterministic stand-in for a frozen scoring model.

    A token's score hashes its identity, its position id and the multiset of
    visible ``(token, position)`` pairs, so any visibility or position error
    changes the score.
    """

    seed: int = 0
    _salt: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_salt", struct.pack("<q", self.seed & 0x7FFF_FFFF_FFFF_FFFF))

    def score(self, token: int, position: int, visible_tokens: np.ndarray, visible_pos: np.ndarray) -> float:
        pairs = np.stack([np.asarray(visible_tokens, np.int64), np.asarray(visible_pos, np.int64)], axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        h = hashlib.blake2b(digest_size=8, key=self._salt)
        h.update(struct.pack("<qq", int(token), int(position)))
        h.update(np.ascontiguousarray(pairs[order]).tobytes())
        return int.from_bytes(h.digest(), "little") / 2.0**64


def execute_plan(plan: BatchPlan, scorer: MockScorer) -> dict[int, float]:
    """Teacher-forced probe scores under the plan's mask and position ids."""
    out: dict[int, float] = {}
    for pid, (start, end) in plan.probe_spans.items():
        total = 0.0
        for row in range(start, end):
            vis = np.flatnonzero(plan.mask[row])
            total += scorer.score(plan.tokens[row], plan.position_ids[row], plan.tokens[vis], plan.position_ids[vis])
        out[pid] = total
    return out


def naive_reference(flow: PerceptualFlow, y, scorer: MockScorer, kind: str = "efficacy") -> dict[int, float]:
    """One separate causal pass per prefix, contiguous positions, no batching."""
    probe = [TERMINAL] if kind == "terminal" else tokenize_answer(y)
    segs = tokenize_flow(flow)
    out: dict[int, float] = {}
    for i in range(len(segs)):
        seq = np.array([t for seg in segs[: i + 1] for t in seg] + probe, dtype=np.int64)
        pos = np.arange(len(seq), dtype=np.int64)
        base = len(seq) - len(probe)
        total = 0.0
        for t in range(base, len(seq)):
            total += scorer.score(seq[t], pos[t], seq[: t + 1], pos[: t + 1])
        out[i] = total
    return out


def mask_violations(plan: BatchPlan) -> list[str]:
    """Structural checks on a plan; an empty list means well-formed."""
    problems = []
    P = plan.prefix_len
    if not np.array_equal(plan.mask[:P, :P], np.tril(np.ones((P, P), dtype=bool))):
        problems.append("prefix block is not causal")
    if plan.mask[:P, P:].any():
        problems.append("prefix tokens see probe tokens")
    owner = np.full(len(plan.tokens), -1)
    for pid, (s, e) in plan.probe_spans.items():
        owner[s:e] = pid
    for pid, (s, e) in plan.probe_spans.items():
        cut = plan.cut_points[pid]
        for r in range(s, e):
            vis = np.flatnonzero(plan.mask[r])
            expect = np.concatenate([np.arange(cut + 1), np.arange(s, r + 1)])
            if not np.array_equal(vis, expect):
                problems.append(f"probe {pid} row {r} has wrong visibility")
        if not np.array_equal(plan.position_ids[s:e], cut + 1 + np.arange(e - s)):
            problems.append(f"probe {pid} position ids do not resume at cut + 1")
        others = (owner >= 0) & (owner != pid)
        if plan.mask[s:e][:, others].any():
            problems.append(f"probe {pid} sees another probe")
    return problems
