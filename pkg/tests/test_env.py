import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import grid_box, make_env
from pflowlab.env import (
    EnumerationTooLarge,
    EnvSpec,
    EnvSpecError,
    enumerate_prior,
    enumerate_support,
    load_env,
    posterior,
    save_env,
    support_masses,
)
from pflowlab.worlds import BUNDLED, bundled_env, bundled_env_path, random_env, r1_env, r2_env, t1_env


def bag_masses(env, dist):
    out = np.zeros(env.M)
    for path, p in zip(dist.paths, dist.probs):
        out[env.bag_of(path)] += p
    return out


def test_prior_single_bag_single_state():
    env = make_env([(0,)], [[0.7, 0.3]], [1.0])
    d = enumerate_prior(env).as_dict()
    assert d == pytest.approx({((0, 0),): 0.7, ((0, 1),): 0.3}, abs=1e-15)


def test_prior_two_bags_two_states_one_caption():
    env = make_env([(0, 1), (2, 3)], [[1.0]] * 4, [0.5, 0.5])
    d = enumerate_prior(env)
    assert len(d) == 4
    assert np.allclose(d.probs, 0.25, atol=1e-15)


def test_prior_matches_formula_by_brute_force(envs):
    for env in envs.values():
        d = enumerate_prior(env).as_dict()
        assert len(d) == env.M * math.factorial(env.K) * env.n_captions**env.K == env.support_size()
        for path, p in d.items():
            want = 1 / env.M / math.factorial(env.K) * math.prod(env.caption_likelihood[c, j] for c, j in path)
            assert p == pytest.approx(want, rel=1e-12)


def test_enumeration_order_is_bag_permutation_caption():
    env = make_env([(0, 1)], [[0.5, 0.5]] * 2, [1.0])
    paths = enumerate_support(env).paths
    assert paths[:2] == [((0, 0), (1, 0)), ((0, 0), (1, 1))]
    assert paths[4] == ((1, 0), (0, 0))


def test_posterior_uniform_answers_equals_prior(envs):
    env = envs["r1"]
    flat = EnvSpec(**{**_fields(env), "answer_likelihood": np.full(env.M, 0.3)})
    assert np.allclose(posterior(flat).probs, enumerate_prior(flat).probs, atol=1e-15)


def test_posterior_bayes_by_hand():
    env = make_env([(0,), (1,)], [[1.0], [1.0]], [0.9, 0.1])
    assert bag_masses(env, posterior(env)) == pytest.approx([0.9, 0.1], abs=1e-15)


def test_posterior_over_prior_constant_within_bag(envs):
    for env in envs.values():
        prior, post = enumerate_prior(env), posterior(env)
        ratios = {}
        for path, p0, p1 in zip(prior.paths, prior.probs, post.probs):
            ratios.setdefault(env.bag_of(path), []).append(p1 / p0)
        for m, rs in ratios.items():
            assert max(rs) - min(rs) <= 1e-12 * max(rs)
        scaled = {m: rs[0] / env.answer_likelihood[m] for m, rs in ratios.items()}
        assert max(scaled.values()) == pytest.approx(min(scaled.values()), rel=1e-12)


def test_t1_support_masses(t1):
    s = support_masses(t1, 0.5)
    assert (s.s_v, s.s_b, s.q) == pytest.approx((0.5, 0.25, 0.5), abs=1e-15)
    assert s.vicinity_within_valid
    assert not support_masses(t1, 0.7).vicinity_within_valid


def test_support_masses_special_cases():
    boxes = [grid_box(0, 0, 100, 100), grid_box(500, 500, 600, 600), grid_box(0, 0, 90, 100), grid_box(800, 0, 900, 100)]
    env = make_env([(0,), (1,), (2,), (3,)], [[1.0]] * 4, [0.2, 0.3, 0.4, 0.1], boxes=boxes, sigma=0.2)
    post = bag_masses(env, posterior(env))
    # E = G and eps = sigma
    s = support_masses(env, env.sigma)
    assert s.s_b == s.s_v and s.q == 1.0
    # E matches bag 0 exactly, eps = 0
    assert support_masses(env, 0.0).s_b == pytest.approx(post[0], abs=1e-15)
    far = make_env([(0,), (1,)], [[1.0]] * 2, [0.5, 0.5], boxes=boxes[:2], expert=[grid_box(900, 900, 1000, 1000)])
    s = support_masses(far, 0.5)
    assert s.s_b == 0.0 and s.q == 0.0
    empty = make_env([(0,), (1,)], [[1.0]] * 2, [0.5, 0.5], boxes=boxes[:2], golden=[grid_box(900, 900, 1000, 1000)], sigma=0.1)
    with pytest.raises(ValueError, match="empty valid support"):
        support_masses(empty, 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
def test_support_masses_monotone_in_eps(seed, e1, e2):
    env = random_env(seed, K=1, M=4, n_captions=2)
    lo, hi = sorted((e1, e2))
    try:
        a, b = support_masses(env, lo), support_masses(env, hi)
    except ValueError:
        return
    assert a.s_b <= b.s_b


def test_enumeration_cap(t1):
    with pytest.raises(EnumerationTooLarge) as info:
        enumerate_support(t1, cap=10)
    assert info.value.size == 32


def _fields(env):
    return dict(
        caption_space=env.caption_space, candidates=env.candidates, bags=env.bags, golden=env.golden,
        expert=env.expert, sigma=env.sigma, caption_likelihood=env.caption_likelihood,
        answer_likelihood=env.answer_likelihood, planning_text=env.planning_text, input_id=env.input_id,
    )


@pytest.mark.parametrize(
    "change, message",
    [
        ({"bags": ((0, 1), (2,), (4, 5), (6, 7))}, "cardinality"),
        ({"bags": ((0, 0), (2, 3), (4, 5), (6, 7))}, "repeats"),
        ({"bags": ((0, 1), (1, 0), (4, 5), (6, 7))}, "duplicates"),
        ({"bags": ((0, 1), (2, 3), (4, 5), (6, 9))}, "unknown candidate"),
        ({"answer_likelihood": [0.4, 0.0, 0.6, 0.2]}, "answer_likelihood"),
        ({"caption_space": ("a", "<box>")}, "tag-free"),
        ({"planning_text": " padded"}, "trimmed"),
        ({"sigma": 1.5}, "sigma"),
    ],
)
def test_invalid_envs(t1, change, message):
    with pytest.raises(EnvSpecError, match=message):
        EnvSpec(**{**_fields(t1), **change})


def test_row_sums_checked_at_tolerance(t1):
    rows = t1.caption_likelihood.copy()
    rows[0] = [0.7, 0.3 + 1e-11]
    with pytest.raises(EnvSpecError, match="sum to 1"):
        EnvSpec(**{**_fields(t1), "caption_likelihood": rows})


def test_json_round_trip_and_hash(tmp_path, envs):
    for env in envs.values():
        p = tmp_path / "env.json"
        save_env(env, p)
        back = load_env(p)
        assert back.to_json() == env.to_json()
        assert back.content_hash() == env.content_hash()


def test_json_accepts_candidate_indices_for_sets(t1):
    doc = t1.to_json()
    doc["golden"] = [4, 0]
    env = EnvSpec.from_json(doc)
    assert env.golden == (t1.candidates[4], t1.candidates[0])


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("envspec_version"),
    lambda d: d.pop("bags"),
    lambda d: d.__setitem__("candidates", [[0.5, 0, 0.5, 1]]),
    lambda d: d.__setitem__("golden", [99]),
])
def test_from_json_schema_errors(t1, mutate):
    doc = json.loads(json.dumps(t1.to_json()))
    mutate(doc)
    with pytest.raises(EnvSpecError):
        EnvSpec.from_json(doc)


def test_malformed_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(EnvSpecError, match="malformed"):
        load_env(p)


def test_bundled_files_match_builders():
    builders = {"t1": t1_env, "r1": r1_env, "r2": r2_env}
    for name in BUNDLED:
        assert bundled_env(name).content_hash() == builders[name]().content_hash()
        assert bundled_env_path(name).is_file()
    sizes = {n: bundled_env(n).support_size() for n in BUNDLED}
    assert sizes == {"t1": 32, "r1": 90, "r2": 192}


def test_path_flow_round_trip(t1):
    for path in enumerate_support(t1).paths[:8]:
        assert t1.path_from_flow(t1.flow_from_path(path)) == path
