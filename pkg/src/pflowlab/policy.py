"""Tabular flow policies over the decision trie of an env.

Every node of the trie is a prefix ``z_{0:k}``; its actions are the admissible
next perceptual states plus the terminal action. Nodes at depth ``K`` carry only
the terminal action, so termination is forced there. The trajectory space is a
tree: each node has exactly one parent and the backward transition is always 1.
"""

from __future__ import annotations

import math

import numpy as np

from .env import DEFAULT_ENUMERATION_CAP, EnumerationTooLarge, EnvSpec, FlowDistribution, FlowPath


class FlowTrie:
    """Decision nodes in breadth-first order with a flat, node-contiguous action layout."""

    def __init__(self, env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP):
        self.env = env
        size = env.support_size()
        if size > cap:
            raise EnumerationTooLarge(size, cap)
        positive = env.caption_likelihood > 0

        paths: list[FlowPath] = [()]
        parent = [-1]
        children: list[list[int]] = []
        head = 0
        while head < len(paths):
            path = paths[head]
            kids: list[int] = []
            if len(path) < env.K:
                used = [c for c, _ in path]
                reachable = sorted(
                    {c for m in env.consistent_bags(used) for c in env.bags[m]} - set(used)
                )
                for c in reachable:
                    for j in range(env.n_captions):
                        if positive[c, j]:
                            kids.append(len(paths))
                            paths.append(path + ((c, j),))
                            parent.append(head)
            children.append(kids)
            head += 1

        n = len(paths)
        self.paths = paths
        self.index = {p: i for i, p in enumerate(paths)}
        self.parent = np.array(parent)
        self.depth = np.array([len(p) for p in paths])
        self.children = children

        # actions: children in order, then the terminal action last
        counts = np.array([len(k) + 1 for k in children])
        self.act_start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.n_actions = int(counts.sum())
        self.action_node = np.repeat(np.arange(n), counts)
        self.action_child = np.full(self.n_actions, -1)
        self.term_action = self.act_start + counts - 1
        self.in_action = np.full(n, -1)
        for node, kids in enumerate(children):
            for a, child in enumerate(kids):
                flat = self.act_start[node] + a
                self.action_child[flat] = child
                self.in_action[child] = flat

        # chain[n, k] = ancestor of n at depth k (padded with -1)
        K = env.K
        chain = np.full((n, K + 1), -1)
        chain[0, 0] = 0
        for node in range(1, n):
            d = self.depth[node]
            chain[node, :d] = chain[self.parent[node], :d]
            chain[node, d] = node
        self.chain = chain
        self.levels = [np.flatnonzero(self.depth == d) for d in range(1, K + 1)]

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def complete(self) -> np.ndarray:
        return np.flatnonzero(self.depth == self.env.K)

    def node_of(self, path: FlowPath) -> int:
        try:
            return self.index[tuple(tuple(s) for s in path)]
        except KeyError:
            raise KeyError(f"path {path} is not a node of the flow trie") from None


def _segment_logsumexp(x: np.ndarray, starts: np.ndarray) -> np.ndarray:
    top = np.maximum.reduceat(x, starts)
    rep = np.repeat(top, np.diff(np.append(starts, len(x))))
    return top + np.log(np.add.reduceat(np.exp(x - rep), starts))


class TabularPolicy:
    """Softmax policy with one logit per trie action."""

    def __init__(self, trie: FlowTrie, logits: np.ndarray | None = None):
        self.trie = trie
        if logits is None:
            logits = np.zeros(trie.n_actions)
        logits = np.asarray(logits, dtype=float)
        if logits.shape != (trie.n_actions,):
            raise ValueError(f"expected {trie.n_actions} logits, got {logits.shape}")
        self.logits = logits

    @classmethod
    def uniform(cls, env: EnvSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> "TabularPolicy":
        return cls(FlowTrie(env, cap))

    def copy(self, logits: np.ndarray | None = None) -> "TabularPolicy":
        return TabularPolicy(self.trie, self.logits.copy() if logits is None else logits)

    def log_probs(self) -> np.ndarray:
        """Log-probability of each flat action under its node's softmax."""
        t = self.trie
        lse = _segment_logsumexp(self.logits, t.act_start)
        return self.logits - lse[t.action_node]

    def node_log_probs(self, node: int) -> np.ndarray:
        t = self.trie
        end = t.act_start[node] + len(t.children[node]) + 1
        return self.log_probs()[t.act_start[node] : end]

    def log_reach(self, logp: np.ndarray | None = None) -> np.ndarray:
        """log p(reach node) from the root, one entry per node."""
        t = self.trie
        if logp is None:
            logp = self.log_probs()
        reach = np.zeros(len(t))
        for nodes in t.levels:
            reach[nodes] = reach[t.parent[nodes]] + logp[t.in_action[nodes]]
        return reach

    def log_terminal(self, logp: np.ndarray | None = None) -> np.ndarray:
        """log p(terminate exactly at node) for every node."""
        if logp is None:
            logp = self.log_probs()
        return self.log_reach(logp) + logp[self.trie.term_action]


def terminated_distribution(policy: TabularPolicy) -> FlowDistribution:
    """Exact distribution of terminated flows under ancestral sampling (all lengths)."""
    w = np.exp(policy.log_terminal())
    return FlowDistribution(policy.trie.paths, w / w.sum())


def complete_distribution(policy: TabularPolicy) -> FlowDistribution:
    """Terminated-flow distribution conditioned on full length ``K``."""
    t = policy.trie
    idx = t.complete
    logw = policy.log_terminal()[idx]
    w = np.exp(logw - logw.max())
    return FlowDistribution([t.paths[i] for i in idx], w / w.sum())


def sample_flows(policy: TabularPolicy, L: int, seed: int) -> list[FlowPath]:
    """``L`` independent ancestral samples; identical seeds give identical output."""
    if L < 1:
        raise ValueError("group size must be positive")
    t = policy.trie
    cum = np.cumsum(np.exp(policy.log_probs()))
    before = np.concatenate([[0.0], cum])[t.act_start]
    seg_total = cum[t.term_action] - before
    rng = np.random.default_rng(seed)
    node = np.zeros(L, dtype=int)
    active = np.ones(L, dtype=bool)
    for _ in range(policy.trie.env.K + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        n = node[idx]
        target = before[n] + rng.random(idx.size) * seg_total[n]
        a = np.searchsorted(cum, target, side="right")
        a = np.clip(a, t.act_start[n], t.term_action[n])
        child = t.action_child[a]
        stop = child < 0
        active[idx[stop]] = False
        node[idx[~stop]] = child[~stop]
    return [t.paths[i] for i in node]


def tv_distance(p: FlowDistribution, q: FlowDistribution) -> float:
    """0.5 * sum |p - q| with flows aligned by identity; missing entries count as 0."""
    pd, qd = p.as_dict(), q.as_dict()
    keys = set(pd) | set(qd)
    total = math.fsum(abs(pd.get(k, 0.0) - qd.get(k, 0.0)) for k in keys)
    return 0.5 * total
