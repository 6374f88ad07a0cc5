"""Gap measurements, theoretical bound constants and structural checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import lp as lpmod
from .core import EnvironmentModel, ValidationError, check_policy, flow_from_policy, project_flow

CMFOMO_DEFAULT_COEFFS = (1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class GapReport:
    """Optimality and feasibility gaps of a policy against its own flow.

    ``v_star`` is NaN (and ``cmdp_feasible`` False) when the constrained MDP
    at ``Psi(pi)`` has no feasible policy; ``g_opt`` is then NaN as well.
    """

    g_opt: float
    g_fea: float
    v_star: float
    v_pi: float
    cost_vector: np.ndarray
    cmdp_feasible: bool = True

    def to_json(self) -> dict:
        return {
            "g_opt": None if math.isnan(self.g_opt) else self.g_opt,
            "g_fea": self.g_fea,
            "v_star": None if math.isnan(self.v_star) else self.v_star,
            "v_pi": self.v_pi,
            "cost_vector": self.cost_vector.tolist(),
            "cmdp_feasible": self.cmdp_feasible,
        }


def constraint_values(env: EnvironmentModel, L: np.ndarray) -> np.ndarray:
    """C_L L: the cumulative expected cost of each constraint under flow ``L``."""
    return np.einsum("ktsa,tsa->k", env.costs(L), L)


def gaps(env: EnvironmentModel, pi: np.ndarray) -> GapReport:
    """Measure G_opt and G_fea of ``pi`` at ``L = Psi(pi)``.

    For population-level constraints the representative agent's best
    response is unconstrained, so ``v_star`` comes from backward induction.
    """
    check_policy(pi, env.dims)
    L = flow_from_policy(pi, env)
    v_pi = float(np.sum(env.rewards(L) * L))
    costs = constraint_values(env, L)
    g_fea = float(np.linalg.norm(np.minimum(0.0, env.gamma0 - costs)))
    if env.population_level or env.dims.n_constraints == 0:
        dual = lpmod.solve_dual_backward(env, L)
        v_star = float(env.mu0 @ dual.V[0])
    else:
        res = lpmod.solve_cmdp_simplex(env, L)
        if not res.optimal:
            return GapReport(float("nan"), g_fea, float("nan"), v_pi, costs, cmdp_feasible=False)
        v_star = float(res.objective)
    return GapReport(v_star - v_pi, g_fea, v_star, v_pi, costs)


# ---------------------------------------------------------------------------
# Bound constants


def alpha_factor(cp: float, horizon_len: int) -> float:
    """((C_p+1)^{|T|+1} - (|T|+1) C_p - 1) / C_p^2, evaluated as its binomial sum.

    The polynomial form sum_{m=2}^{|T|+1} binom(|T|+1, m) C_p^{m-2} has no
    cancellation and gives |T|(|T|+1)/2 at C_p = 0.
    """
    n = horizon_len
    return float(sum(math.comb(n + 1, m) * cp ** (m - 2) for m in range(2, n + 2)))


@dataclass(frozen=True)
class BoundSet:
    beta_y: float
    beta_z: float
    alpha: float
    zeta1: float
    zeta2: float
    zeta3: float
    zeta4: float
    lambda_bound: float
    lambda_bound_tilde: float
    beta_y_tilde: float
    beta_z_tilde: float
    zeta1_tilde: float
    zeta2_tilde: float
    zeta4_tilde: float
    beta_y_pop: float
    beta_z_pop: float
    zeta1_pop: float
    zeta2_pop: float
    c_psa: float
    c_tilde: float
    eps1_factor: float
    eps2_factor: float
    delta: float
    eps0: float

    def opt_upper(self, eps: float, horizon_len: int) -> float:
        return eps * ((horizon_len + 1) * self.zeta1 + self.zeta2 + self.zeta4)

    def opt_lower(self, eps: float, n_constraints: int) -> float:
        return -eps * math.sqrt(n_constraints) * self.lambda_bound * self.zeta3

    def fea_upper(self, eps: float) -> float:
        return eps * self.zeta3

    def tightened_opt_upper(self, horizon_len: int, n_constraints: int) -> float:
        """Optimality bound after solving at gamma0 - eps0 to objective eps0 / zeta3."""
        bracket = (horizon_len + 1) * self.zeta1_tilde + self.zeta2_tilde + self.zeta4_tilde
        return self.eps0 / self.zeta3 * (bracket + self.zeta3 * n_constraints * self.lambda_bound_tilde)

    def eps_ne(self, eps: float) -> tuple[float, float]:
        """(eps1, eps2) of the N-player approximate equilibrium at accuracy ``eps``."""
        return eps * self.eps1_factor, eps * self.eps2_factor

    def n_required(self, eps: float) -> int:
        """Smallest N with (1/(2 sqrt N) + 2/N) * C_tilde <= eps."""
        if self.c_tilde <= 0:
            return 1
        # 2 x^2 + x / 2 - eps / C <= 0 with x = 1 / sqrt(N)
        q = eps / self.c_tilde
        x = (-0.5 + math.sqrt(0.25 + 8.0 * q)) / 4.0
        return max(1, math.ceil(1.0 / x**2 - 1e-9))

    def to_json(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


def bound_constants(env: EnvironmentModel, coeffs=None, delta: float = 1.0, eps0: float = 0.0) -> BoundSet:
    """Closed-form constants of the suboptimality, tightening and N-player bounds.

    ``coeffs`` is any object with attributes ``c1..c5`` or a 5-sequence.
    """
    if env.lipschitz is None:
        raise ValidationError("environment carries no Lipschitz constants")
    if coeffs is None:
        c1, c2, c3, c4, c5 = CMFOMO_DEFAULT_COEFFS
    elif hasattr(coeffs, "c1"):
        c1, c2, c3, c4, c5 = coeffs.c1, coeffs.c2, coeffs.c3, coeffs.c4, coeffs.c5
    else:
        c1, c2, c3, c4, c5 = (float(c) for c in coeffs)
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if not 0 <= eps0 < delta:
        raise ValidationError("eps0 must satisfy 0 <= eps0 < delta")
    cp, cr, cc = env.lipschitz
    d = env.dims
    S, A, T, k = d.n_states, d.n_actions, d.horizon_len, d.n_constraints
    r, c = env.r_abs_max, env.c_abs_max

    alpha = alpha_factor(cp, T) * math.sqrt(S) / c2
    by_pop = S * T * (T + 1) / 2 * r
    bz_pop = S * A * (T * T - T + 2) * r

    def pieces(dl: float):
        lam = T * r / dl
        by = by_pop * (1 + T * c / dl)
        bz = bz_pop * (1 + T * c / dl)
        z1 = 1 / c1 + alpha * (cp * by + cr + k * cc * lam)
        z2 = 1 / c3 + bz * alpha
        z4 = 1 / c5 + k * alpha * lam * (k * c + cc * S * A * T)
        return lam, by, bz, z1, z2, z4

    lam, by, bz, z1, z2, z4 = pieces(delta)
    z3 = 1 / c4 + alpha * (k * c + cc * S * A * T)
    lamt, byt, bzt, z1t, z2t, z4t = pieces(delta - eps0)

    cpsa = (cp + 1) * S * A
    geo = T if cpsa == 1 else (cpsa**T - 1) / (cpsa - 1)
    c_tilde = cp * S * A * (T - 1) ** 2 * geo * max(cr + r, cc + c)
    return BoundSet(
        beta_y=by,
        beta_z=bz,
        alpha=alpha,
        zeta1=z1,
        zeta2=z2,
        zeta3=z3,
        zeta4=z4,
        lambda_bound=lam,
        lambda_bound_tilde=lamt,
        beta_y_tilde=byt,
        beta_z_tilde=bzt,
        zeta1_tilde=z1t,
        zeta2_tilde=z2t,
        zeta4_tilde=z4t,
        beta_y_pop=by_pop,
        beta_z_pop=bz_pop,
        zeta1_pop=1 / c1 + alpha * (cp * by_pop + cr),
        zeta2_pop=1 / c3 + bz_pop * alpha,
        c_psa=cpsa,
        c_tilde=c_tilde,
        eps1_factor=2 + k * T * r / delta,
        eps2_factor=math.sqrt(k),
        delta=float(delta),
        eps0=float(eps0),
    )


# ---------------------------------------------------------------------------
# Structural checks


def _random_flow(rng: np.random.Generator, shape) -> np.ndarray:
    return project_flow(rng.dirichlet(np.ones(shape[1] * shape[2]), size=shape[0]).reshape(shape))


@dataclass(frozen=True)
class MonotonicityReport:
    max_value: float
    n_violations: int
    n_samples: int

    @property
    def monotone(self) -> bool:
        return self.n_violations == 0


def check_monotonicity(env: EnvironmentModel, n_samples: int = 200, seed: int = 0, tol: float = 1e-12):
    """Sample sum_t (r_t(L1) - r_t(L2)) . (L1_t - L2_t) over random flow pairs.

    Only meaningful when transitions and constraint costs ignore the flow.
    """
    if not (env.transitions_flow_independent and env.costs_flow_independent):
        raise ValidationError("monotonicity check needs flow-independent transitions and costs")
    rng = np.random.default_rng(seed)
    shape = env.dims.shape
    vals = np.empty(n_samples)
    for i in range(n_samples):
        L1, L2 = _random_flow(rng, shape), _random_flow(rng, shape)
        vals[i] = np.sum((env.rewards(L1) - env.rewards(L2)) * (L1 - L2))
    return MonotonicityReport(float(vals.max(initial=-np.inf)), int(np.sum(vals > tol)), n_samples)


@dataclass(frozen=True)
class TwinnedReport:
    max_abs_diff: float
    n_samples: int
    tol: float

    @property
    def twinned(self) -> bool:
        return self.max_abs_diff <= self.tol


def check_twinned(env_pop: EnvironmentModel, env_agent: EnvironmentModel, n_samples: int = 200, seed: int = 0, tol: float = 1e-9):
    """Compare population-level costs with the flow-average of agent-level costs.

    Both environments store costs per (t, s, a); the population cost of a
    flow is its flow-weighted total, so this compares the two totals.
    """
    if env_pop.dims != env_agent.dims:
        raise ValidationError(f"dimension mismatch: {env_pop.dims} vs {env_agent.dims}")
    rng = np.random.default_rng(seed)
    shape = env_pop.dims.shape
    worst = 0.0
    samples = [np.full(shape, 1.0 / (shape[1] * shape[2]))] + [_random_flow(rng, shape) for _ in range(n_samples)]
    for L in samples:
        diff = constraint_values(env_pop, L) - env_pop.gamma0 - (constraint_values(env_agent, L) - env_agent.gamma0)
        worst = max(worst, float(np.abs(diff).max(initial=0.0)))
    return TwinnedReport(worst, len(samples), tol)


def sensitivity_check(
    env: EnvironmentModel, L: np.ndarray, gamma1, gamma2, delta: Optional[float] = None, tol: float = 1e-8
) -> bool:
    """Check |V*(gamma1) - V*(gamma2)| <= |gamma1 - gamma2|_1 |T| r_max / delta.

    ``delta`` defaults to the smaller strict-feasibility margin of the two
    thresholds at ``L``.
    """
    g1, g2 = np.asarray(gamma1, float), np.asarray(gamma2, float)
    margins = []
    for g in (g1, g2):
        rep = lpmod.check_strict_feasibility(env, L, gamma0=g)
        if rep.max_delta <= 0:
            raise ValidationError(f"threshold {g.tolist()} is not strictly feasible at this flow")
        margins.append(rep.max_delta)
    if delta is None:
        delta = min(margins)
    v = []
    for g in (g1, g2):
        res = lpmod.solve_cmdp_simplex(env, L, gamma0=g)
        v.append(res.objective)
    bound = np.abs(g1 - g2).sum() * env.dims.horizon_len * env.r_abs_max / delta
    return bool(abs(v[0] - v[1]) <= bound + tol)
