"""Fully enumerable synthetic worlds.

An :class:`EnvSpec` stands in for one ``(X, Y, E)`` sample: a small universe of
candidate boxes, ``M`` admissible bags of ``K`` boxes each, a caption table
``P(c | region)`` and an answer table ``P(Y | bag)``. Flows over an env are
addressed by *paths*: tuples of ``(candidate index, caption index)`` pairs, one per
perceptual state.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .flow import PerceptualFlow, PerceptualState, PlanningState, _TAG_RE
from .geometry import RoiBox, chamfer_iou_distance

ENVSPEC_VERSION = 1
DEFAULT_ENUMERATION_CAP = 200_000
ROW_TOL = 1e-12

FlowPath = tuple[tuple[int, int], ...]


class EnvSpecError(ValueError):
    pass


class EnumerationTooLarge(RuntimeError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"support of {size} flows exceeds the enumeration cap {cap}")
        self.size = size
        self.cap = cap


@dataclass(eq=False)
class EnvSpec:
    caption_space: tuple[str, ...]
    candidates: tuple[RoiBox, ...]
    bags: tuple[tuple[int, ...], ...]
    golden: tuple[RoiBox, ...]
    expert: tuple[RoiBox, ...]
    sigma: float
    caption_likelihood: np.ndarray
    answer_likelihood: np.ndarray
    planning_text: str
    input_id: str = "x0"
    _bag_lookup: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.caption_space = tuple(str(c) for c in self.caption_space)
        self.candidates = tuple(self.candidates)
        self.bags = tuple(tuple(int(i) for i in b) for b in self.bags)
        self.golden = tuple(self.golden)
        self.expert = tuple(self.expert)
        self.sigma = float(self.sigma)
        self.caption_likelihood = np.array(self.caption_likelihood, dtype=float)
        self.answer_likelihood = np.array(self.answer_likelihood, dtype=float).reshape(-1)
        self._validate()
        self._bag_lookup = {frozenset(b): m for m, b in enumerate(self.bags)}

    def _validate(self) -> None:
        if not self.caption_space:
            raise EnvSpecError("caption_space is empty")
        if len(set(self.caption_space)) != len(self.caption_space):
            raise EnvSpecError("caption_space has duplicates")
        for c in self.caption_space:
            if not c.strip() or c != c.strip() or _TAG_RE.search(c):
                raise EnvSpecError(f"caption {c!r} must be trimmed, non-empty and tag-free")
        if not self.planning_text.strip() or _TAG_RE.search(self.planning_text):
            raise EnvSpecError("planning_text must be non-empty and tag-free")
        if self.planning_text != self.planning_text.strip():
            raise EnvSpecError("planning_text must be trimmed")
        if not self.candidates:
            raise EnvSpecError("no candidate boxes")
        if len(set(self.candidates)) != len(self.candidates):
            raise EnvSpecError("duplicate candidate boxes")
        if not self.bags:
            raise EnvSpecError("no bags")
        K = len(self.bags[0])
        if K < 1:
            raise EnvSpecError("bags must be non-empty")
        seen = set()
        for m, bag in enumerate(self.bags):
            if len(bag) != K:
                raise EnvSpecError(f"bag {m} has cardinality {len(bag)}, expected {K}")
            if len(set(bag)) != K:
                raise EnvSpecError(f"bag {m} repeats a candidate")
            for i in bag:
                if not 0 <= i < len(self.candidates):
                    raise EnvSpecError(f"bag {m} references unknown candidate {i}")
            key = frozenset(bag)
            if key in seen:
                raise EnvSpecError(f"bag {m} duplicates an earlier bag")
            seen.add(key)
        if not self.golden or not self.expert:
            raise EnvSpecError("golden and expert sets must be non-empty")
        if not 0.0 <= self.sigma <= 1.0:
            raise EnvSpecError(f"sigma must lie in [0, 1], got {self.sigma}")
        cl = self.caption_likelihood
        if cl.shape != (len(self.candidates), len(self.caption_space)):
            raise EnvSpecError(
                f"caption_likelihood shape {cl.shape} != "
                f"({len(self.candidates)}, {len(self.caption_space)})"
            )
        if np.any(cl < 0) or not np.all(np.isfinite(cl)):
            raise EnvSpecError("caption_likelihood entries must be finite and >= 0")
        bad = np.flatnonzero(np.abs(cl.sum(axis=1) - 1.0) > ROW_TOL)
        if bad.size:
            raise EnvSpecError(f"caption_likelihood rows {bad.tolist()} do not sum to 1")
        al = self.answer_likelihood
        if al.shape != (len(self.bags),):
            raise EnvSpecError(f"answer_likelihood needs {len(self.bags)} entries, got {al.shape}")
        if np.any(al <= 0) or np.any(al > 1) or not np.all(np.isfinite(al)):
            raise EnvSpecError("answer_likelihood values must lie in (0, 1]")

    # -- shape -------------------------------------------------------------

    @property
    def K(self) -> int:
        return len(self.bags[0])

    @property
    def M(self) -> int:
        return len(self.bags)

    @property
    def n_captions(self) -> int:
        return len(self.caption_space)

    def support_size(self) -> int:
        return self.M * math.factorial(self.K) * self.n_captions**self.K

    def bag_boxes(self, m: int) -> list[RoiBox]:
        return [self.candidates[i] for i in self.bags[m]]

    # -- paths <-> flows ---------------------------------------------------

    def consistent_bags(self, cands: Sequence[int]) -> list[int]:
        """Bags that some permutation of which starts with ``cands``."""
        if len(set(cands)) != len(cands):
            return []
        need = set(cands)
        return [m for m, b in enumerate(self.bags) if need.issubset(b)]

    def bag_of(self, path: FlowPath) -> int:
        if len(path) != self.K:
            raise EnvSpecError(f"path of length {len(path)} is not a complete flow")
        m = self._bag_lookup.get(frozenset(c for c, _ in path))
        if m is None or len({c for c, _ in path}) != self.K:
            raise EnvSpecError(f"path {path} does not realize any bag")
        return m

    def flow_from_path(self, path: FlowPath, terminated: bool = True) -> PerceptualFlow:
        states = tuple(
            PerceptualState(self.candidates[c], self.caption_space[j]) for c, j in path
        )
        return PerceptualFlow(PlanningState(self.planning_text), states, terminated)

    def path_from_flow(self, flow) -> FlowPath:
        states = flow.states
        box_index = {b: i for i, b in enumerate(self.candidates)}
        cap_index = {c: j for j, c in enumerate(self.caption_space)}
        path = []
        for s in states:
            if s.roi not in box_index:
                raise EnvSpecError(f"box {s.roi.as_tuple()} is not an env candidate")
            if s.caption not in cap_index:
                raise EnvSpecError(f"caption {s.caption!r} is not in the caption space")
            path.append((box_index[s.roi], cap_index[s.caption]))
        return tuple(path)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "envspec_version": ENVSPEC_VERSION,
            "input_id": self.input_id,
            "caption_space": list(self.caption_space),
            "candidates": [list(b.as_tuple()) for b in self.candidates],
            "bags": [list(b) for b in self.bags],
            "golden": [list(b.as_tuple()) for b in self.golden],
            "expert": [list(b.as_tuple()) for b in self.expert],
            "sigma": self.sigma,
            "caption_likelihood": self.caption_likelihood.tolist(),
            "answer_likelihood": self.answer_likelihood.tolist(),
            "planning_text": self.planning_text,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EnvSpec":
        if not isinstance(doc, dict):
            raise EnvSpecError("env document must be a JSON object")
        version = doc.get("envspec_version")
        if version != ENVSPEC_VERSION:
            raise EnvSpecError(f"unsupported envspec_version {version!r}")
        required = (
            "caption_space", "candidates", "bags", "golden", "expert", "sigma",
            "caption_likelihood", "answer_likelihood", "planning_text",
        )
        missing = [k for k in required if k not in doc]
        if missing:
            raise EnvSpecError(f"missing keys: {', '.join(missing)}")
        try:
            candidates = tuple(RoiBox.of(c) for c in doc["candidates"])

            def boxes(items):
                # a set member is either a candidate index or an explicit box
                return tuple(
                    candidates[it] if isinstance(it, int) else RoiBox.of(it) for it in items
                )

            return cls(
                caption_space=tuple(doc["caption_space"]),
                candidates=candidates,
                bags=tuple(tuple(b) for b in doc["bags"]),
                golden=boxes(doc["golden"]),
                expert=boxes(doc["expert"]),
                sigma=doc["sigma"],
                caption_likelihood=doc["caption_likelihood"],
                answer_likelihood=doc["answer_likelihood"],
                planning_text=doc["planning_text"],
                input_id=str(doc.get("input_id", "x0")),
            )
        except EnvSpecError:
            raise
        except (TypeError, ValueError, IndexError, KeyError) as exc:
            raise EnvSpecError(str(exc)) from None

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_env(path) -> EnvSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnvSpecError(f"malformed JSON: {exc}") from None
    return EnvSpec.from_json(doc)


def save_env(env: EnvSpec, path) -> None:
    Path(path).write_text(json.dumps(env.to_json(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Distributions


@dataclass
class FlowDistribution:
    """Probabilities over terminated flows, keyed by env path."""

    paths: tuple[FlowPath, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        self.paths = tuple(self.paths)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (len(self.paths),):
            raise ValueError("paths and probs must be parallel")
        if np.any(self.probs < 0):
            raise ValueError("negative probability")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.paths)

    def as_dict(self) -> dict[FlowPath, float]:
        out: dict[FlowPath, float] = {}
        for p, v in zip(self.paths, self.probs):
            out[p] = out.get(p, 0.0) + float(v)
        return out

    def flows(self, env: EnvSpec) -> list[PerceptualFlow]:
        return [env.flow_from_path(p) for p in self.paths]


@dataclass
class Enumeration:
    """The complete-flow support of an env in (bag, permutation, caption) order."""

    paths: list[FlowPath]
    bag: np.ndarray
    log_prior: np.ndarray


def enumerate_support(env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> Enumeration:
    size = env.support_size()
    if size > cap:
        raise EnumerationTooLarge(size, cap)
    K, C = env.K, env.n_captions
    with np.errstate(divide="ignore"):
        log_cl = np.log(env.caption_likelihood)
    base = -math.log(env.M) - math.lgamma(K + 1)
    captions = list(itertools.product(range(C), repeat=K))
    paths: list[FlowPath] = []
    bags = np.empty(size, dtype=int)
    log_prior = np.empty(size)
    n = 0
    for m, bag in enumerate(env.bags):
        for perm in itertools.permutations(bag):
            lp_rows = log_cl[list(perm)]
            for caps in captions:
                paths.append(tuple(zip(perm, caps)))
                bags[n] = m
                log_prior[n] = base + lp_rows[np.arange(K), caps].sum()
                n += 1
    return Enumeration(paths, bags, log_prior)


def _normalize(logw: np.ndarray) -> np.ndarray:
    top = logw.max()
    if not np.isfinite(top):
        raise ValueError("all-zero mass")
    w = np.exp(logw - top)
    return w / w.sum()


def enumerate_prior(env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> FlowDistribution:
    en = enumerate_support(env, cap)
    return FlowDistribution(en.paths, _normalize(en.log_prior))


def log_posterior_weights(env: EnvSpec, en: Enumeration) -> np.ndarray:
    """Unnormalized log P(Z|X) + log P(Y|Z,X) over the enumerated support."""
    return en.log_prior + np.log(env.answer_likelihood)[en.bag]


def posterior(env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> FlowDistribution:
    en = enumerate_support(env, cap)
    return FlowDistribution(en.paths, _normalize(log_posterior_weights(env, en)))


# ---------------------------------------------------------------------------
# Support masses


@dataclass(frozen=True)
class SupportStats:
    s_v: float
    s_b: float
    q: float
    vicinity_within_valid: bool = True


def bag_distances(env: EnvSpec, reference: Sequence[RoiBox]) -> np.ndarray:
    return np.array([chamfer_iou_distance(env.bag_boxes(m), reference) for m in range(env.M)])


def valid_bags(env: EnvSpec) -> np.ndarray:
    return bag_distances(env, env.golden) <= env.sigma


def vicinity_bags(env: EnvSpec, eps: float) -> np.ndarray:
    return bag_distances(env, env.expert) <= eps


def support_masses(env: EnvSpec, eps: float, cap: int = DEFAULT_ENUMERATION_CAP) -> SupportStats:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    en = enumerate_support(env, cap)
    post = _normalize(log_posterior_weights(env, en))
    in_v = valid_bags(env)[en.bag]
    in_b = vicinity_bags(env, eps)[en.bag]
    s_v = float(post[in_v].sum())
    s_b = float(post[in_b].sum())
    if s_v <= 0.0:
        raise ValueError("empty valid support")
    nested = bool(np.all(in_v[in_b]))
    q = s_b / s_v
    if nested:
        s_b = min(s_b, s_v)
        q = min(q, 1.0)
    return SupportStats(s_v, s_b, q, nested)
