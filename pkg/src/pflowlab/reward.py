"""Multi-dimensional reward with vicinal shaping, and the tilted posterior it induces.

Rewards are evaluated on prefixes ``z_{0:k}`` given as env paths. Everything is
carried in log space; a zero caption likelihood gives ``-inf`` and is flagged
rather than clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .env import (
    DEFAULT_ENUMERATION_CAP,
    EnvSpec,
    FlowDistribution,
    FlowPath,
    enumerate_support,
    log_posterior_weights,
    vicinity_bags,
)
from .flow import FlowPrefix, PerceptualFlow
from .geometry import log_shaping_weight

PrefixLike = Union[FlowPath, FlowPrefix, PerceptualFlow, Sequence[tuple[int, int]]]


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 4.5
    eps: float = 0.5

    def __post_init__(self) -> None:
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")


@dataclass(frozen=True)
class RewardBreakdown:
    log_contrastive: float
    log_efficacy: float
    log_shaping: float
    zero_caption: bool = False

    @property
    def log_total(self) -> float:
        return self.log_contrastive + self.log_efficacy + self.log_shaping

    @property
    def contrastive(self) -> float:
        return math.exp(self.log_contrastive)

    @property
    def efficacy(self) -> float:
        return math.exp(self.log_efficacy)

    @property
    def shaping(self) -> float:
        return math.exp(self.log_shaping)

    @property
    def total(self) -> float:
        return math.exp(self.log_total)

    def to_json(self) -> dict:
        return {
            "contrastive": self.contrastive,
            "efficacy": self.efficacy,
            "shaping": self.shaping,
            "total": self.total,
            "log_total": self.log_total,
            "zero_caption": self.zero_caption,
        }


def as_path(env: EnvSpec, prefix: PrefixLike) -> FlowPath:
    if isinstance(prefix, (FlowPrefix, PerceptualFlow)):
        return env.path_from_flow(prefix)
    return tuple((int(c), int(j)) for c, j in prefix)


def log_contrastive_term(env: EnvSpec, prefix: PrefixLike) -> float:
    """Sum over states of ``log P(c|r) - log(1/|C|)``; 0 for the bare planning state."""
    path = as_path(env, prefix)
    total = 0.0
    log_c = math.log(env.n_captions)
    for cand, cap in path:
        p = env.caption_likelihood[cand, cap]
        if p <= 0.0:
            return -math.inf
        total += math.log(p) + log_c
    return total


def contrastive_term(env: EnvSpec, prefix: PrefixLike) -> float:
    return math.exp(log_contrastive_term(env, prefix))


def efficacy_term(env: EnvSpec, prefix: PrefixLike) -> float:
    """P(Y | prefix, X) under the bag-mean rule.

    Averages the answer likelihood over bags the prefix can still complete to.
    Given the uniform prior over bags and orderings, every consistent bag is equally
    likely, so this is the exact predictive and equals the table entry for a
    complete flow and the marginal P(Y|X) for the bare planning state.
    """
    path = as_path(env, prefix)
    bags = env.consistent_bags([c for c, _ in path])
    if not bags:
        raise ValueError(f"prefix {path} is not consistent with any bag")
    return float(np.mean(env.answer_likelihood[bags]))


def marginal_answer_likelihood(env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """P(Y|X) = sum_Z P(Z|X) P(Y|Z,X), by enumeration."""
    en = enumerate_support(env, cap)
    prior = np.exp(en.log_prior)
    return float(np.sum(prior * env.answer_likelihood[en.bag]) / prior.sum())


def information_gain(env: EnvSpec, prefix: PrefixLike, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    return math.log(efficacy_term(env, prefix)) - math.log(marginal_answer_likelihood(env, cap))


def shaped_reward(env: EnvSpec, cfg: RewardConfig, prefix: PrefixLike) -> RewardBreakdown:
    path = as_path(env, prefix)
    log_contrast = log_contrastive_term(env, path)
    rois = [env.candidates[c] for c, _ in path]
    return RewardBreakdown(
        log_contrastive=log_contrast,
        log_efficacy=math.log(efficacy_term(env, path)),
        log_shaping=log_shaping_weight(rois, env.expert, cfg.eps, cfg.lam),
        zero_caption=log_contrast == -math.inf,
    )


def tilted_posterior(
    env: EnvSpec, cfg: RewardConfig, cap: int = DEFAULT_ENUMERATION_CAP
) -> tuple[FlowDistribution, float]:
    """Posterior reweighted by the shaping factor, and its enumerated normalizer."""
    en = enumerate_support(env, cap)
    logw = log_posterior_weights(env, en)
    top = logw.max()
    post = np.exp(logw - top)
    post /= post.sum()
    omega = np.where(vicinity_bags(env, cfg.eps)[en.bag], 1.0, math.exp(-cfg.lam))
    tilted = post * omega
    z_lambda = float(tilted.sum())
    return FlowDistribution(en.paths, tilted / z_lambda), z_lambda


def partition_closed_form(s_b: float, lam: float) -> float:
    if not 0.0 <= s_b <= 1.0:
        raise ValueError(f"s_b must lie in [0, 1], got {s_b}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return s_b + math.exp(-lam) * (1.0 - s_b)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def contrastive_kl_identity(q_dist, p_plus, p_minus) -> tuple[float, float]:
    """``E_q[log p+/p-]`` and ``KL(q||p-) - KL(q||p+)``, which must agree."""
    q = np.asarray(q_dist, dtype=float)
    pp = np.asarray(p_plus, dtype=float)
    pm = np.asarray(p_minus, dtype=float)
    if not (q.shape == pp.shape == pm.shape) or q.ndim != 1:
        raise ValueError("distributions must be 1-d over the same caption space")
    for name, d in (("q", q), ("p_plus", pp), ("p_minus", pm)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector")
    mask = q > 0
    if np.any(pp[mask] == 0) or np.any(pm[mask] == 0):
        raise ValueError("q puts mass where p_plus or p_minus vanishes")
    lhs = float(np.sum(q[mask] * (np.log(pp[mask]) - np.log(pm[mask]))))
    rhs = _kl(q, pm) - _kl(q, pp)
    return lhs, rhs
