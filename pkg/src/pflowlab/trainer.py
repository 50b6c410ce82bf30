"""Plain gradient descent on the sub-trajectory balance loss for tabular policies."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import EnvSpec
from .policy import TabularPolicy, complete_distribution, sample_flows, tv_distance
from .reward import RewardConfig, tilted_posterior
from .subtb import Objective
from .theory import valid_posterior

log = logging.getLogger(__name__)

MODES = ("exact", "sampled")
METRIC_COLUMNS = ("step", "loss", "grad_norm", "tv_tilted", "tv_valid")


class TrainingError(RuntimeError):
    def __init__(self, message: str, last_good: Optional[TabularPolicy] = None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history or []


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 0.1
    steps: int = 2000
    group_size: int = 8
    seed: int = 0
    mode: str = "exact"
    strict_descent: bool = True

    def __post_init__(self) -> None:
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.steps < 1 or self.group_size < 1:
            raise ValueError("steps and group_size must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class TrainResult:
    policy: TabularPolicy
    history: list[dict] = field(default_factory=list)

    def final(self) -> dict:
        return self.history[-1]


def train(
    env: EnvSpec,
    cfg: RewardConfig,
    tcfg: TrainConfig,
    init: Optional[TabularPolicy] = None,
) -> TrainResult:
    """Run ``tcfg.steps`` descent steps and record metrics after every step.

    Exact mode averages the per-flow loss over every terminated flow weighted by
    its current policy probability; the weights act as the sampling distribution
    and are not differentiated, so the update is the expectation of the sampled
    one. Sampled mode draws ``group_size`` flows per step.
    """
    objective = Objective.for_env(env, cfg) if init is None else Objective(init.trie, cfg)
    policy = TabularPolicy(objective.trie) if init is None else init.copy()
    target_tilted, _ = tilted_posterior(env, cfg)
    target_valid = valid_posterior(env)
    rng = np.random.default_rng(tcfg.seed)

    history: list[dict] = []
    prev_loss = math.inf
    for step in range(tcfg.steps):
        if tcfg.mode == "exact":
            loss, grad = objective.expected_loss(policy, differentiate_weights=False)
        else:
            flows = sample_flows(policy, tcfg.group_size, int(rng.integers(2**63 - 1)))
            loss, grad = objective.loss_and_gradient(policy, flows)
        grad_norm = float(np.linalg.norm(grad))
        if not (math.isfinite(loss) and math.isfinite(grad_norm)):
            raise TrainingError(f"divergence at step {step}: loss={loss}", policy.copy(), history)
        if tcfg.mode == "exact" and tcfg.strict_descent and loss > prev_loss + 1e-12 * max(1.0, prev_loss):
            raise TrainingError(
                f"loss increased at step {step}: {prev_loss!r} -> {loss!r}; reduce the step size",
                policy.copy(),
                history,
            )
        prev_loss = loss
        current = complete_distribution(policy)
        history.append(
            {
                "step": step,
                "loss": loss,
                "grad_norm": grad_norm,
                "tv_tilted": tv_distance(current, target_tilted),
                "tv_valid": tv_distance(current, target_valid),
            }
        )
        policy = policy.copy(policy.logits - tcfg.step_size * grad)
    log.debug("finished %d steps, final loss %.3g", tcfg.steps, history[-1]["loss"])
    return TrainResult(policy, history)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in history:
        w.writerow([fmt(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()
