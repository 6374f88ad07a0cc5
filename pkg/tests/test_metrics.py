import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmfg.cmfomo import CmfomoCoeffs, SolveConfig, solve
from cmfg.core import (
    AffineEnvSpec,
    GameDims,
    ValidationError,
    builtin_sis,
    flow_from_policy,
    load_affine_env,
    random_affine_env,
    two_step_sis,
    uniform_policy,
    without_constraints,
)
from cmfg.lp import solve_dual_backward
from cmfg.metrics import (
    alpha_factor,
    bound_constants,
    check_monotonicity,
    check_twinned,
    constraint_values,
    gaps,
)

from conftest import two_step_ne_policy


def alpha_closed_form(cp, n):
    return ((cp + 1) ** (n + 1) - (n + 1) * cp - 1) / cp**2


def static_game(reward_coeff):
    """One state, two actions, two steps; transitions and costs ignore the flow."""
    spec = AffineEnvSpec(
        dims=GameDims(1, 2, 2, 0),
        mu0=np.ones(1),
        gamma0=np.zeros(0),
        trans_base=np.ones((2, 1, 2, 1)),
        trans_coeff=np.zeros((2, 1, 2, 1, 2)),
        reward_base=np.array([[[0.3, -0.2]], [[0.1, 0.0]]]),
        reward_coeff=reward_coeff,
        cost_base=np.zeros((0, 2, 1, 2)),
        cost_coeff=np.zeros((0, 2, 1, 2, 2)),
    )
    return load_affine_env(spec)


# ---------------------------------------------------------------------------
# alpha and the closed-form constants


@pytest.mark.parametrize("cp", [0.01, 0.5, 1.0, 2.7])
@pytest.mark.parametrize("n", [1, 2, 5, 11])
def test_alpha_factor_matches_closed_form(cp, n):
    assert alpha_factor(cp, n) == pytest.approx(alpha_closed_form(cp, n), rel=1e-9)


@pytest.mark.parametrize("n", [1, 3, 11])
def test_alpha_factor_zero_lipschitz_limit(n):
    assert alpha_factor(0.0, n) == n * (n + 1) / 2
    assert alpha_factor(1e-6, n) == pytest.approx(n * (n + 1) / 2, rel=1e-4)


def test_zero_lipschitz_env_alpha():
    env = without_constraints(random_affine_env(np.random.default_rng(0), 3, 2, 4, flow_weight=0.0))
    bs = bound_constants(env, CmfomoCoeffs(c2=2.0))
    assert bs.alpha == pytest.approx(4 * 5 / 2 * math.sqrt(3) / 2.0)


def test_bound_constants_by_hand_for_sis():
    env = builtin_sis(T=10, gamma0=0.25)
    delta, eps0 = 0.2, 0.05
    c = CmfomoCoeffs(1.0, 2.0, 0.5, 1.5, 3.0)
    bs = bound_constants(env, c, delta=delta, eps0=eps0)
    S, A, T, k = 2, 2, 11, 1
    cp, cr, cc = 2.7, 0.0, 0.0
    r, cmax = 1.5, 1 / 11
    alpha = alpha_closed_form(cp, T) * math.sqrt(S) / c.c2
    assert bs.alpha == pytest.approx(alpha, rel=1e-12)

    def zetas(dl):
        by = S * T * (T + 1) / 2 * r * (1 + T * cmax / dl)
        bz = S * A * (T * T - T + 2) * r * (1 + T * cmax / dl)
        lam = T * r / dl
        z1 = 1 / c.c1 + alpha * (cp * by + cr + k * cc * lam)
        z2 = 1 / c.c3 + bz * alpha
        z4 = 1 / c.c5 + k * alpha * lam * (k * cmax + cc * S * A * T)
        return by, bz, lam, z1, z2, z4

    by, bz, lam, z1, z2, z4 = zetas(delta)
    z3 = 1 / c.c4 + alpha * (k * cmax + cc * S * A * T)
    for got, want in [(bs.beta_y, by), (bs.beta_z, bz), (bs.lambda_bound, lam), (bs.zeta1, z1), (bs.zeta2, z2),
                      (bs.zeta3, z3), (bs.zeta4, z4)]:
        assert got == pytest.approx(want, rel=1e-12)
    byt, bzt, lamt, z1t, z2t, z4t = zetas(delta - eps0)
    for got, want in [(bs.beta_y_tilde, byt), (bs.beta_z_tilde, bzt), (bs.lambda_bound_tilde, lamt),
                      (bs.zeta1_tilde, z1t), (bs.zeta2_tilde, z2t), (bs.zeta4_tilde, z4t)]:
        assert got == pytest.approx(want, rel=1e-12)
    assert bs.beta_y_pop == pytest.approx(S * T * (T + 1) / 2 * r)
    assert bs.zeta1_pop == pytest.approx(1 / c.c1 + alpha * (cp * bs.beta_y_pop + cr))
    # N-player constants
    assert bs.c_psa == pytest.approx((cp + 1) * S * A)
    geo = sum(bs.c_psa**i for i in range(T))
    assert bs.c_tilde == pytest.approx(cp * S * A * (T - 1) ** 2 * geo * max(cr + r, cc + cmax), rel=1e-12)


def test_suboptimality_bounds_scale_linearly():
    bs = bound_constants(builtin_sis(T=3), delta=0.3)
    assert bs.opt_upper(2e-3, 4) == pytest.approx(2 * bs.opt_upper(1e-3, 4))
    assert bs.opt_lower(1e-3, 1) == pytest.approx(-1e-3 * bs.lambda_bound * bs.zeta3)
    assert bs.fea_upper(1e-3) == pytest.approx(1e-3 * bs.zeta3)


def test_eps_ne_plug_in_example():
    env = builtin_sis(T=10)
    bs = bound_constants(env, delta=0.1)
    e1, e2 = bs.eps_ne(0.01)
    assert e1 == pytest.approx(0.01 * 167)
    assert e2 == pytest.approx(0.01)


@pytest.mark.parametrize("N", [1, 4, 400, 10_000])
def test_n_required_round_trip(N):
    bs = bound_constants(two_step_sis(1.0), delta=0.5)
    eps = bs.c_tilde * (1 / (2 * math.sqrt(N)) + 2 / N)
    assert bs.n_required(eps) == N


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(1e-3, 10.0))
def test_n_required_is_minimal(eps):
    bs = bound_constants(two_step_sis(1.0), delta=0.5)
    n = bs.n_required(eps)

    def err(N):
        return bs.c_tilde * (1 / (2 * math.sqrt(N)) + 2 / N)

    assert err(n) <= eps * (1 + 1e-9)
    assert n == 1 or err(n - 1) > eps


def test_bound_argument_validation():
    env = builtin_sis(T=2)
    with pytest.raises(ValidationError):
        bound_constants(env, delta=0.0)
    with pytest.raises(ValidationError):
        bound_constants(env, delta=0.1, eps0=0.1)


def test_bound_constants_accept_sequence_coefficients():
    env = builtin_sis(T=2)
    a = bound_constants(env, CmfomoCoeffs(1, 2, 3, 4, 5), delta=0.2)
    b = bound_constants(env, [1, 2, 3, 4, 5], delta=0.2)
    assert a == b


# ---------------------------------------------------------------------------
# Gaps


@pytest.mark.parametrize("gamma0", [0.6125, 0.8, 1.0])
def test_gaps_of_exact_equilibrium(gamma0):
    rep = gaps(two_step_sis(gamma0), two_step_ne_policy(gamma0))
    assert abs(rep.g_opt) <= 1e-8
    assert rep.g_fea == 0.0


def test_gaps_of_infeasible_policy():
    env = builtin_sis(T=10, gamma0=0.3)
    pi = np.zeros(env.dims.shape)
    pi[..., 0] = 1.0  # everyone always goes out
    rep = gaps(env, pi)
    assert rep.cost_vector[0] > 0.3
    assert rep.g_fea == pytest.approx(rep.cost_vector[0] - 0.3)


def test_unconstrained_equilibrium_has_negative_optimality_gap():
    # damped best responses approach the unconstrained equilibrium, which
    # infects more than the threshold allows; any feasible policy earns less
    env = builtin_sis(T=10, gamma0=0.25)
    free = without_constraints(env)
    T1 = env.dims.horizon_len
    pi = uniform_policy(env.dims)
    for _ in range(50):
        greedy = solve_dual_backward(free, flow_from_policy(pi, env)).greedy
        br = np.zeros(env.dims.shape)
        br[np.arange(T1)[:, None], np.arange(2)[None, :], greedy] = 1.0
        pi = 0.8 * pi + 0.2 * br
    assert gaps(free, pi).g_opt < 2e-3
    rep = gaps(env, pi)
    assert rep.g_fea > 0 and rep.g_opt < 0


def test_gaps_report_infeasible_cmdp():
    env = builtin_sis(T=10, gamma0=0.01)
    rep = gaps(env, uniform_policy(env.dims))
    assert not rep.cmdp_feasible and math.isnan(rep.g_opt)
    assert rep.to_json()["g_opt"] is None


def test_population_gaps_use_unconstrained_best_response():
    env = builtin_sis(T=5, gamma0=0.3, constraint_kind="pop_state")
    pi = uniform_policy(env.dims)
    free = gaps(without_constraints(env), pi)
    rep = gaps(env, pi)
    assert rep.g_opt == pytest.approx(free.g_opt, abs=1e-12)


def test_suboptimality_inequalities_hold_along_runs():
    rng = np.random.default_rng(3)
    for _ in range(3):
        env = random_affine_env(rng, 2, 2, 3, 1, flow_weight=0.3)
        res = solve(env, SolveConfig(max_iters=400, trace_every=400))
        eps = res.objective
        bs = bound_constants(env, res.config.coeffs, delta=res.box.delta)
        rep = gaps(env, res.policy)
        T, k = env.dims.horizon_len, env.dims.n_constraints
        assert bs.opt_lower(eps, k) <= rep.g_opt <= bs.opt_upper(eps, T)
        assert rep.g_fea <= bs.fea_upper(eps)


# ---------------------------------------------------------------------------
# Structural checks


def test_monotonicity_flow_independent_reward_is_boundary():
    rep = check_monotonicity(static_game(np.zeros((2, 1, 2, 2))))
    assert rep.max_value == 0.0 and rep.monotone


def test_monotonicity_crowd_aversion_is_strict():
    coeff = np.zeros((2, 1, 2, 2))
    coeff[:, 0, 0, 0] = coeff[:, 0, 1, 1] = -1.0  # r_t(s, a, L) = -L_t(s, a)
    rep = check_monotonicity(static_game(coeff), n_samples=100)
    assert rep.monotone and rep.max_value < 0


def test_monotonicity_crowd_seeking_detected():
    coeff = np.zeros((2, 1, 2, 2))
    coeff[:, 0, 0, 0] = coeff[:, 0, 1, 1] = 1.0
    assert not check_monotonicity(static_game(coeff), n_samples=50).monotone


def test_monotonicity_inapplicable_to_sis():
    with pytest.raises(ValidationError):
        check_monotonicity(builtin_sis(T=2))


def test_twinned_costs():
    agent = builtin_sis(T=10, gamma0=0.3, constraint_kind="agent_state")
    pop = builtin_sis(T=10, gamma0=0.3, constraint_kind="pop_state")
    assert check_twinned(pop, agent).twinned
    action = builtin_sis(T=10, gamma0=0.3, constraint_kind="agent_action")
    rep = check_twinned(pop, action)
    assert not rep.twinned and rep.max_abs_diff > 0.1
    free = without_constraints(agent)
    assert check_twinned(free, free).twinned


def test_twinned_dimension_mismatch():
    with pytest.raises(ValidationError):
        check_twinned(builtin_sis(T=2), builtin_sis(T=3))


def test_constraint_values_all_home():
    env = builtin_sis(T=10, mu0_I=0.5)
    pi = np.zeros(env.dims.shape)
    pi[..., 1] = 1.0
    L = flow_from_policy(pi, env)
    assert constraint_values(env, L)[0] == pytest.approx(np.mean(0.5 * 0.5 ** np.arange(11)))
