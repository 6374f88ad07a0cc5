import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmfg.core import (
    AffineEnvSpec,
    GameDims,
    ValidationError,
    builtin_sis,
    flow_from_policy,
    is_flow,
    load_affine_env,
    load_env_file,
    occupation_from_policy,
    policy_from_occupation,
    project_flow,
    project_simplex,
    random_affine_env,
    two_step_sis,
    uniform_policy,
    without_constraints,
)

from conftest import D, I_, S_, U


def all_d_policy(T1):
    pi = np.zeros((T1, 2, 2))
    pi[:, :, D] = 1.0
    return pi


# ---------------------------------------------------------------------------
# Flows and occupation measures


def test_uniform_policy_first_slice_is_product():
    env = builtin_sis(T=10, mu0_I=0.5)
    L = flow_from_policy(uniform_policy(env.dims), env)
    np.testing.assert_allclose(L[0], np.full((2, 2), 0.25))


def test_point_mass_start_stays_point_mass_at_t0():
    env = random_affine_env(np.random.default_rng(3), 3, 2, 3)
    spec = env.spec
    mu0 = np.array([1.0, 0.0, 0.0])
    env = load_affine_env(AffineEnvSpec(**{**spec.__dict__, "mu0": mu0}))
    pi = np.zeros(env.dims.shape)
    pi[..., 0] = 1.0
    L = flow_from_policy(pi, env)
    expected = np.zeros((3, 2))
    expected[0, 0] = 1.0
    np.testing.assert_array_equal(L[0], expected)


def test_all_stay_home_infection_halves_each_step():
    env = builtin_sis(T=10, mu0_I=0.5)
    L = flow_from_policy(all_d_policy(11), env)
    infected = L[:, I_, :].sum(axis=1)
    np.testing.assert_allclose(infected, 0.5 * 0.5 ** np.arange(11), atol=1e-15)
    assert np.all(L[:, :, U] == 0)


def test_all_stay_home_occupation_ignores_flow():
    env = builtin_sis(T=10, mu0_I=0.5)
    rng = np.random.default_rng(0)
    L = project_flow(rng.uniform(size=env.dims.shape))
    d = occupation_from_policy(all_d_policy(11), L, env)
    np.testing.assert_allclose(d[:, I_, D], 0.5 * 0.5 ** np.arange(11), atol=1e-15)


def test_single_state_occupation_equals_policy():
    spec = AffineEnvSpec(
        dims=GameDims(1, 3, 4, 0),
        mu0=np.ones(1),
        gamma0=np.zeros(0),
        trans_base=np.ones((4, 1, 3, 1)),
        trans_coeff=np.zeros((4, 1, 3, 1, 3)),
        reward_base=np.zeros((4, 1, 3)),
        reward_coeff=np.zeros((4, 1, 3, 3)),
        cost_base=np.zeros((0, 4, 1, 3)),
        cost_coeff=np.zeros((0, 4, 1, 3, 3)),
    )
    env = load_affine_env(spec)
    pi = np.random.default_rng(1).dirichlet(np.ones(3), size=(4, 1))
    d = occupation_from_policy(pi, flow_from_policy(pi, env), env)
    np.testing.assert_allclose(d, pi, atol=1e-15)


def test_flow_is_fixed_point_of_occupation():
    rng = np.random.default_rng(7)
    env = random_affine_env(rng, 3, 2, 4, 1)
    pi = rng.dirichlet(np.ones(2), size=(4, 3))
    L = flow_from_policy(pi, env)
    assert is_flow(L)
    np.testing.assert_allclose(occupation_from_policy(pi, L, env), L, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), S=st.integers(1, 3), A=st.integers(1, 3), T1=st.integers(1, 4))
def test_policy_round_trip_on_positive_policies(seed, S, A, T1):
    rng = np.random.default_rng(seed)
    env = random_affine_env(rng, S, A, T1)
    env = load_affine_env(AffineEnvSpec(**{**env.spec.__dict__, "mu0": np.full(S, 1.0 / S)}))
    pi = rng.dirichlet(np.ones(A), size=(T1, S)) * 0.9 + 0.1 / A
    L = flow_from_policy(pi, env)
    np.testing.assert_allclose(policy_from_occupation(L), pi, atol=1e-12)


def test_zero_state_row_gives_uniform_row():
    d = np.zeros((2, 2, 3))
    d[:, 0] = [0.2, 0.3, 0.5]
    pi = policy_from_occupation(d)
    np.testing.assert_allclose(pi[:, 1], np.full((2, 3), 1 / 3))
    np.testing.assert_allclose(pi[:, 0], np.tile([0.2, 0.3, 0.5], (2, 1)))


def test_all_stay_home_recovered_from_its_flow():
    env = builtin_sis(T=10, mu0_I=0.5)
    L = flow_from_policy(all_d_policy(11), env)
    pi = policy_from_occupation(L)
    visited = L.sum(axis=2) > 0
    assert np.all(pi[..., D][visited] == 1.0)


def test_policy_shape_mismatch_rejected():
    env = builtin_sis(T=2)
    with pytest.raises(ValidationError):
        flow_from_policy(np.full((2, 2, 2), 0.5), env)
    with pytest.raises(ValidationError):
        flow_from_policy(np.full((3, 2, 2), 0.7), env)


# ---------------------------------------------------------------------------
# Projection


def test_projection_examples():
    np.testing.assert_allclose(project_simplex(np.array([0.6, 0.6])), [[0.5, 0.5]])
    np.testing.assert_allclose(project_simplex(np.array([0.2, 0.3, 0.5])), [[0.2, 0.3, 0.5]])
    np.testing.assert_allclose(project_simplex(np.array([1.2, -0.1, 0.3])), [[0.95, 0.0, 0.05]], atol=1e-15)


def _brute_force_projection(v, step=1e-3):
    # grid over the 3-simplex, used only as an oracle for small vectors
    best, arg = np.inf, None
    n = int(round(1 / step))
    for i in range(n + 1):
        a = i * step
        b = np.linspace(0, 1 - a, n - i + 1)
        c = 1 - a - b
        dist = (v[0] - a) ** 2 + (v[1] - b) ** 2 + (v[2] - c) ** 2
        j = int(np.argmin(dist))
        if dist[j] < best:
            best, arg = dist[j], np.array([a, b[j], c[j]])
    return arg


@settings(max_examples=15, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-2, 2)))
def test_projection_matches_grid_search(v):
    np.testing.assert_allclose(project_simplex(v)[0], _brute_force_projection(v), atol=2e-3)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)))
def test_projection_is_idempotent_and_on_simplex(v):
    p = project_simplex(v)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.integers(0, 1000))
def test_projection_is_nearest_point(v, seed):
    # variational inequality: (v - p) . (q - p) <= 0 for all q in the simplex
    p = project_simplex(v)[0]
    q = np.random.default_rng(seed).dirichlet(np.ones(4))
    assert (v - p) @ (q - p) <= 1e-9


def test_project_flow_rejects_nan():
    with pytest.raises(ValidationError):
        project_flow(np.array([[[np.nan, 1.0]]]))


# ---------------------------------------------------------------------------
# Environments


def test_sis_constants():
    env = builtin_sis(T=10)
    assert env.r_abs_max == 1.5
    coeff = env.spec.trans_coeff[0, S_, U, I_]
    expected = np.zeros(4)
    expected[I_ * 2 + U] = 0.9
    np.testing.assert_array_equal(coeff, expected)
    assert env.lipschitz == pytest.approx((2.7, 0.0, 0.0))


def test_sis_constraint_encodings():
    env = builtin_sis(T=10, mu0_I=0.5, gamma0=0.25, constraint_kind="agent_state")
    assert env.dims.n_constraints == 1
    np.testing.assert_array_equal(env.gamma0, [0.25])
    env = builtin_sis(T=10, gamma0=0.7, constraint_kind="agent_action")
    np.testing.assert_array_equal(env.gamma0, [-0.7])
    np.testing.assert_allclose(env.spec.cost_base[0, :, :, U], -1 / 11)
    np.testing.assert_array_equal(env.spec.cost_base[0, :, :, D], 0.0)
    env = builtin_sis(T=10, constraint_kind="pop_state")
    assert env.population_level


def test_sis_t1_is_two_step_game():
    a = builtin_sis(T=1, mu0_I=1.0, gamma0=0.8)
    b = two_step_sis(0.8)
    np.testing.assert_array_equal(a.spec.trans_base, b.spec.trans_base)
    np.testing.assert_array_equal(a.spec.trans_coeff, b.spec.trans_coeff)
    np.testing.assert_array_equal(a.spec.reward_base, b.spec.reward_base)
    np.testing.assert_array_equal(a.mu0, b.mu0)


def test_transition_depends_on_infected_going_out():
    env = builtin_sis(T=1)
    Lt = np.array([[0.3, 0.2], [0.4, 0.1]])
    P = env.transition(0, Lt)
    assert P[S_, U, I_] == pytest.approx(0.9 * 0.4)
    assert P[I_, U, S_] == pytest.approx(0.5 * (1 - 0.9 * 0.4))
    assert P[I_, D, S_] == pytest.approx(0.5)
    np.testing.assert_allclose(P.sum(axis=2), 1.0)


def test_zero_coefficient_env_is_flow_independent():
    env = without_constraints(random_affine_env(np.random.default_rng(0), 2, 2, 2, flow_weight=0.0))
    assert env.transitions_flow_independent and env.costs_flow_independent
    assert not np.any(env.reward_jacobian)


def test_invalid_transition_rejected():
    env = builtin_sis(T=1)
    base = env.spec.trans_base.copy()
    base[0, S_, D] = [0.6, 0.6]
    with pytest.raises(ValidationError, match="does not sum to 1"):
        load_affine_env(AffineEnvSpec(**{**env.spec.__dict__, "trans_base": base}))


def test_invalid_mu0_rejected():
    env = builtin_sis(T=1)
    with pytest.raises(ValidationError, match="mu0"):
        load_affine_env(AffineEnvSpec(**{**env.spec.__dict__, "mu0": np.array([0.7, 0.7])}))


def test_builtin_argument_validation():
    with pytest.raises(ValidationError):
        builtin_sis(T=0)
    with pytest.raises(ValidationError):
        builtin_sis(mu0_I=1.5)
    with pytest.raises(ValidationError):
        builtin_sis(constraint_kind="nope")


def test_env_json_round_trip(tmp_path):
    env = random_affine_env(np.random.default_rng(5), 2, 3, 3, 2)
    path = tmp_path / "env.json"
    path.write_text(json.dumps(env.spec.to_json()))
    back = load_env_file(path)
    assert back.dims == env.dims
    for name in ("trans_base", "trans_coeff", "reward_base", "reward_coeff", "cost_base", "cost_coeff", "mu0", "gamma0"):
        np.testing.assert_array_equal(getattr(back.spec, name), getattr(env.spec, name))


def test_env_json_errors_point_at_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"dims": [1,\n')
    with pytest.raises(ValidationError, match=r"bad.json:\d+:\d+"):
        load_env_file(path)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(0, 2))
def test_random_envs_valid_on_every_flow(seed, k):
    rng = np.random.default_rng(seed)
    env = random_affine_env(rng, 3, 2, 3, k)
    L = project_flow(rng.uniform(size=env.dims.shape))
    P = env.transitions(L)
    assert np.all(P >= -1e-12)
    np.testing.assert_allclose(P.sum(axis=3), 1.0, atol=1e-12)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_nonfinite_threshold_rejected(bad):
    with pytest.raises(ValidationError):
        builtin_sis(T=2, gamma0=bad)
    with pytest.raises(ValidationError):
        builtin_sis(T=2).with_gamma0([bad])
