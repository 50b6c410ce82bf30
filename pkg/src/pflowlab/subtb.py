"""Sub-trajectory balance residuals, loss and exact gradients for tabular policies.

For a terminated flow ending at node ``z_{0:n}`` every residual collapses to a
difference of one per-node potential::

    u(z_{0:k}) = log R(z_{0:k}T) - log p(T | z_{0:k}) - log p(reach z_{0:k})
    Delta_{i,j} = u(z_{0:i}) - u(z_{0:j})

which makes the loss and its gradient cheap to vectorize over the whole trie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import EnvSpec, FlowPath
from .policy import FlowTrie, TabularPolicy
from .reward import RewardConfig, shaped_reward


class SubTbError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SubTbResidual:
    i: int
    j: int
    value: float


def node_log_rewards(trie: FlowTrie, cfg: RewardConfig) -> np.ndarray:
    """``log R_lambda(z_{0:k}T)`` for every trie node."""
    env = trie.env
    return np.array([shaped_reward(env, cfg, p).log_total for p in trie.paths])


class Objective:
    """Binds a policy trie to the shaped log-rewards of one ``(env, cfg)`` pair."""

    def __init__(self, trie: FlowTrie, cfg: RewardConfig):
        self.trie = trie
        self.cfg = cfg
        self.log_rewards = node_log_rewards(trie, cfg)
        bad = np.flatnonzero(~np.isfinite(self.log_rewards))
        if bad.size:
            raise SubTbError(f"non-positive reward at prefixes {[trie.paths[b] for b in bad[:3]]}")

    @classmethod
    def for_env(cls, env: EnvSpec, cfg: RewardConfig) -> "Objective":
        return cls(FlowTrie(env), cfg)

    def potentials(self, policy: TabularPolicy, logp: np.ndarray | None = None) -> np.ndarray:
        t = self.trie
        if logp is None:
            logp = policy.log_probs()
        return self.log_rewards - logp[t.term_action] - policy.log_reach(logp)

    def _nodes(self, flows: Sequence) -> np.ndarray:
        return np.array([f if isinstance(f, (int, np.integer)) else self.trie.node_of(f) for f in flows])

    # -- per-flow quantities ------------------------------------------------

    def flow_function(self, policy: TabularPolicy, prefix: FlowPath) -> float:
        """F(z_k) = R(z_{0:k}T) / p(T | z_{0:k})."""
        node = self.trie.node_of(prefix)
        log_term = policy.log_probs()[self.trie.term_action[node]]
        if log_term == -math.inf:
            raise SubTbError(f"zero termination probability at {prefix}")
        return math.exp(self.log_rewards[node] - log_term)

    def residual(self, policy: TabularPolicy, flow: FlowPath, i: int, j: int) -> SubTbResidual:
        flow = tuple(flow)
        if not 0 <= i <= j <= len(flow):
            raise IndexError(f"need 0 <= i <= j <= {len(flow)}, got ({i}, {j})")
        node = self.trie.node_of(flow)
        u = self.potentials(policy)
        a, b = self.trie.chain[node, i], self.trie.chain[node, j]
        value = float(u[a] - u[b])
        if not math.isfinite(value):
            raise SubTbError(f"non-finite residual at (i, j) = ({i}, {j})")
        return SubTbResidual(i, j, value)

    def residual_direct(self, policy: TabularPolicy, flow: FlowPath, i: int, j: int) -> float:
        """Residual straight from the log-ratio definition, term by term."""
        flow = tuple(flow)
        logp = policy.log_probs()
        t = self.trie
        ni, nj = t.node_of(flow[:i]), t.node_of(flow[:j])
        forward = 0.0
        for k in range(i + 1, j + 1):
            forward += logp[t.in_action[t.node_of(flow[:k])]]
        num = self.log_rewards[ni] + forward + logp[t.term_action[nj]]
        den = self.log_rewards[nj] + logp[t.term_action[ni]]
        return float(num - den)

    # -- group loss and gradient ----------------------------------------------

    def _loss_and_grad(
        self,
        policy: TabularPolicy,
        nodes: np.ndarray,
        weights: np.ndarray,
        differentiate_weights: bool = False,
    ) -> tuple[float, np.ndarray]:
        t = self.trie
        logp = policy.log_probs()
        u = self.potentials(policy, logp)
        chain = t.chain[nodes]
        mask = chain >= 0
        U = np.where(mask, u[np.where(mask, chain, 0)], 0.0)
        count = mask.sum(axis=1)
        centered = np.where(mask, U - (U.sum(axis=1) / count)[:, None], 0.0)
        # sum_{i<j} (u_i - u_j)^2 = n * sum_i (u_i - mean u)^2
        per_flow = count * (centered * centered).sum(axis=1)
        if not np.all(np.isfinite(per_flow)):
            raise SubTbError("non-finite loss")
        loss = float(np.dot(weights, per_flow))

        g = 2.0 * count[:, None] * centered * weights[:, None]
        dlogp = np.zeros(t.n_actions)
        # u depends on -log p(T|node) and on -log p(a) for every action a on the path to node
        np.add.at(dlogp, t.term_action[chain[mask]], -g[mask])
        suffix = np.cumsum(g[:, ::-1], axis=1)[:, ::-1]
        inner = mask[:, 1:]
        np.add.at(dlogp, t.in_action[chain[:, 1:][inner]], -suffix[:, 1:][inner])

        if differentiate_weights:
            # weights are terminal probabilities: d w / d log p = w on every action taken
            wl = weights * per_flow
            np.add.at(dlogp, t.term_action[nodes], wl)
            np.add.at(dlogp, t.in_action[chain[:, 1:][inner]], np.broadcast_to(wl[:, None], inner.shape)[inner])

        probs = np.exp(logp)
        seg = np.add.reduceat(dlogp, t.act_start)
        grad = dlogp - probs * seg[t.action_node]
        return loss, grad

    def loss(self, policy: TabularPolicy, flows: Sequence) -> float:
        """Mean over the group of the summed squared residuals of each flow."""
        nodes = self._nodes(flows)
        if nodes.size == 0:
            raise ValueError("empty flow group")
        return self._loss_and_grad(policy, nodes, np.full(len(nodes), 1.0 / len(nodes)))[0]

    def loss_gradient(self, policy: TabularPolicy, flows: Sequence) -> np.ndarray:
        nodes = self._nodes(flows)
        if nodes.size == 0:
            raise ValueError("empty flow group")
        return self._loss_and_grad(policy, nodes, np.full(len(nodes), 1.0 / len(nodes)))[1]

    def loss_and_gradient(self, policy: TabularPolicy, flows: Sequence) -> tuple[float, np.ndarray]:
        nodes = self._nodes(flows)
        return self._loss_and_grad(policy, nodes, np.full(len(nodes), 1.0 / len(nodes)))

    def expected_loss(self, policy: TabularPolicy, differentiate_weights: bool = True) -> tuple[float, np.ndarray]:
        """Loss averaged over every terminated flow, weighted by its exact policy probability."""
        nodes = np.arange(len(self.trie))
        w = np.exp(policy.log_terminal())
        w = w / w.sum()
        return self._loss_and_grad(policy, nodes, w, differentiate_weights)

    # -- optimum ----------------------------------------------------------------

    def optimal_policy(self) -> TabularPolicy:
        """Policy whose terminal distribution over all prefixes is proportional to R.

        Backward induction: a node's subtree mass is its own terminal reward plus
        its children's subtree masses; actions get logits equal to log masses.
        """
        t = self.trie
        mass = self.log_rewards.copy()
        for nodes in reversed(t.levels):
            np.logaddexp.at(mass, t.parent[nodes], mass[nodes])
        logits = np.empty(t.n_actions)
        child = t.action_child
        is_child = child >= 0
        logits[is_child] = mass[child[is_child]]
        logits[t.term_action] = self.log_rewards
        if not np.all(np.isfinite(logits)):
            raise SubTbError("zero subtree mass")
        # center per node for numerical tidiness; softmax is shift invariant
        top = np.maximum.reduceat(logits, t.act_start)
        return TabularPolicy(t, logits - top[t.action_node])


def residual(objective: Objective, policy: TabularPolicy, flow: FlowPath, i: int, j: int) -> SubTbResidual:
    return objective.residual(policy, flow, i, j)


def subtb_loss(objective: Objective, policy: TabularPolicy, flows: Sequence) -> float:
    return objective.loss(policy, flows)


def loss_gradient(objective: Objective, policy: TabularPolicy, flows: Sequence) -> np.ndarray:
    return objective.loss_gradient(policy, flows)


def optimal_policy_from_reward(env: EnvSpec, cfg: RewardConfig) -> TabularPolicy:
    return Objective.for_env(env, cfg).optimal_policy()
