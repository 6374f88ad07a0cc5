"""Game dimensions, affine environments, and flow/policy conversions.

Arrays follow a fixed ``(t, s, a)`` layout. A flow, policy or occupation
measure is a float array of shape ``(horizon_len, n_states, n_actions)``;
flattened vectors use index ``t * S * A + s * A + a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

# Shape aliases, kept as plain ndarrays.
MeanFieldFlow = np.ndarray
Policy = np.ndarray
OccupationMeasure = np.ndarray

MASS_TOL = 1e-9
DEAD_STATE_TOL = 1e-12

SIS_STATES = ("S", "I")
SIS_ACTIONS = ("U", "D")
CONSTRAINT_KINDS = ("agent_state", "agent_action", "pop_state")


class ValidationError(ValueError):
    """Raised when an environment or input array violates its contract."""


@dataclass(frozen=True)
class GameDims:
    n_states: int
    n_actions: int
    horizon_len: int
    n_constraints: int = 0

    def __post_init__(self):
        if min(self.n_states, self.n_actions, self.horizon_len) < 1:
            raise ValidationError(f"dimensions must be positive: {self}")
        if self.n_constraints < 0:
            raise ValidationError("n_constraints must be >= 0")

    @property
    def n_sa(self) -> int:
        return self.n_states * self.n_actions

    @property
    def n_vars(self) -> int:
        return self.horizon_len * self.n_sa

    @property
    def n_rows(self) -> int:
        return self.horizon_len * self.n_states

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.horizon_len, self.n_states, self.n_actions)


@dataclass(frozen=True)
class AffineEnvSpec:
    """Serializable environment whose dynamics, reward and costs are affine in L_t.

    For each ``(t, s, a)`` the next-state distribution is
    ``trans_base[t, s, a] + trans_coeff[t, s, a] @ L_t.ravel()`` and likewise
    for the reward and each cost component.
    """

    dims: GameDims
    mu0: np.ndarray  # (S,)
    gamma0: np.ndarray  # (k,)
    trans_base: np.ndarray  # (T1, S, A, S)
    trans_coeff: np.ndarray  # (T1, S, A, S, SA)
    reward_base: np.ndarray  # (T1, S, A)
    reward_coeff: np.ndarray  # (T1, S, A, SA)
    cost_base: np.ndarray  # (k, T1, S, A)
    cost_coeff: np.ndarray  # (k, T1, S, A, SA)
    population_level: bool = False
    lipschitz: Optional[tuple[float, float, float]] = None
    name: str = "affine"

    def to_json(self) -> dict:
        d = self.dims
        doc = {
            "name": self.name,
            "dims": {
                "n_states": d.n_states,
                "n_actions": d.n_actions,
                "horizon_len": d.horizon_len,
                "n_constraints": d.n_constraints,
            },
            "mu0": self.mu0.tolist(),
            "gamma0": self.gamma0.tolist(),
            "transition": {"base": self.trans_base.tolist(), "coeff": self.trans_coeff.tolist()},
            "reward": {"base": self.reward_base.tolist(), "coeff": self.reward_coeff.tolist()},
            "costs": [
                {"base": self.cost_base[i].tolist(), "coeff": self.cost_coeff[i].tolist()}
                for i in range(d.n_constraints)
            ],
            "population_level": bool(self.population_level),
        }
        if self.lipschitz is not None:
            cp, cr, cc = self.lipschitz
            doc["lipschitz"] = {"cp": cp, "cr": cr, "cc": cc}
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AffineEnvSpec":
        try:
            dd = doc["dims"]
            dims = GameDims(
                int(dd["n_states"]),
                int(dd["n_actions"]),
                int(dd["horizon_len"]),
                int(dd.get("n_constraints", len(doc.get("costs", [])))),
            )
            T1, S, A, SA, k = dims.horizon_len, dims.n_states, dims.n_actions, dims.n_sa, dims.n_constraints
            costs = doc.get("costs", [])
            if len(costs) != k:
                raise ValidationError(f"'costs' has {len(costs)} entries, dims says {k}")
            lip = doc.get("lipschitz")
            spec = cls(
                dims=dims,
                mu0=_arr(doc["mu0"], (S,), "mu0"),
                gamma0=_arr(doc["gamma0"], (k,), "gamma0"),
                trans_base=_arr(doc["transition"]["base"], (T1, S, A, S), "transition.base"),
                trans_coeff=_arr(doc["transition"]["coeff"], (T1, S, A, S, SA), "transition.coeff"),
                reward_base=_arr(doc["reward"]["base"], (T1, S, A), "reward.base"),
                reward_coeff=_arr(doc["reward"]["coeff"], (T1, S, A, SA), "reward.coeff"),
                cost_base=np.stack([_arr(c["base"], (T1, S, A), f"costs[{i}].base") for i, c in enumerate(costs)])
                if k
                else np.zeros((0, T1, S, A)),
                cost_coeff=np.stack(
                    [_arr(c["coeff"], (T1, S, A, SA), f"costs[{i}].coeff") for i, c in enumerate(costs)]
                )
                if k
                else np.zeros((0, T1, S, A, SA)),
                population_level=bool(doc.get("population_level", False)),
                lipschitz=(float(lip["cp"]), float(lip["cr"]), float(lip["cc"])) if lip else None,
                name=str(doc.get("name", "affine")),
            )
        except KeyError as exc:
            raise ValidationError(f"missing key {exc}") from exc
        return spec


def _arr(value, shape, what) -> np.ndarray:
    out = np.asarray(value, dtype=float)
    if out.shape != shape:
        raise ValidationError(f"{what}: expected shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{what}: non-finite entries")
    return out


@dataclass(frozen=True)
class EnvironmentModel:
    """A validated affine environment plus the constants the bounds need."""

    spec: AffineEnvSpec
    r_abs_max: float
    c_abs_max: float
    lipschitz: tuple[float, float, float]
    gamma0: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.gamma0 is None:
            object.__setattr__(self, "gamma0", self.spec.gamma0.copy())
        if not np.all(np.isfinite(self.gamma0)):
            raise ValidationError(f"constraint thresholds must be finite, got {self.gamma0.tolist()}")

    @property
    def dims(self) -> GameDims:
        return self.spec.dims

    @property
    def mu0(self) -> np.ndarray:
        return self.spec.mu0

    @property
    def population_level(self) -> bool:
        return self.spec.population_level

    @property
    def name(self) -> str:
        return self.spec.name

    def with_gamma0(self, gamma0) -> "EnvironmentModel":
        g = np.asarray(gamma0, dtype=float).reshape(self.dims.n_constraints)
        return replace(self, gamma0=g)

    # Per-time evaluation; Lt is the (S, A) flow slice.
    def transition(self, t: int, Lt: np.ndarray) -> np.ndarray:
        sp = self.spec
        return sp.trans_base[t] + sp.trans_coeff[t] @ Lt.ravel()

    def reward(self, t: int, Lt: np.ndarray) -> np.ndarray:
        sp = self.spec
        return sp.reward_base[t] + sp.reward_coeff[t] @ Lt.ravel()

    def cost(self, t: int, Lt: np.ndarray) -> np.ndarray:
        sp = self.spec
        return sp.cost_base[:, t] + sp.cost_coeff[:, t] @ Lt.ravel()

    # Whole-horizon evaluation.
    def transitions(self, L: np.ndarray) -> np.ndarray:
        flat = L.reshape(L.shape[0], -1)
        return self.spec.trans_base + np.einsum("tsaij,tj->tsai", self.spec.trans_coeff, flat)

    def rewards(self, L: np.ndarray) -> np.ndarray:
        flat = L.reshape(L.shape[0], -1)
        return self.spec.reward_base + np.einsum("tsaj,tj->tsa", self.spec.reward_coeff, flat)

    def costs(self, L: np.ndarray) -> np.ndarray:
        flat = L.reshape(L.shape[0], -1)
        return self.spec.cost_base + np.einsum("ktsaj,tj->ktsa", self.spec.cost_coeff, flat)

    # Jacobians with respect to the flattened L_t.
    @property
    def transition_jacobian(self) -> np.ndarray:
        return self.spec.trans_coeff

    @property
    def reward_jacobian(self) -> np.ndarray:
        return self.spec.reward_coeff

    @property
    def cost_jacobian(self) -> np.ndarray:
        return self.spec.cost_coeff

    @property
    def transitions_flow_independent(self) -> bool:
        return not np.any(self.spec.trans_coeff)

    @property
    def costs_flow_independent(self) -> bool:
        return not np.any(self.spec.cost_coeff)


def load_affine_env(spec: AffineEnvSpec, tol: float = MASS_TOL) -> EnvironmentModel:
    """Validate ``spec`` on the simplex vertices and derive bound constants.

    By affinity, checking every vertex ``e_j`` of ``Delta(S x A)`` is enough
    for the transitions to be valid on the whole simplex.
    """
    d = spec.dims
    if abs(spec.mu0.sum() - 1.0) > tol or np.any(spec.mu0 < -tol):
        raise ValidationError(f"mu0 is not a probability vector: {spec.mu0}")
    # vertex_p[t, s, a, s', j]: transition at vertex j
    vertex_p = spec.trans_base[..., None] + spec.trans_coeff
    bad = np.argwhere((vertex_p < -tol) | (vertex_p > 1 + tol))
    if bad.size:
        t, s, a, _, j = bad[0]
        raise ValidationError(f"transition out of [0,1] at (t={t}, s={s}, a={a}) on simplex vertex {j}")
    sums = vertex_p.sum(axis=3)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if bad.size:
        t, s, a, j = bad[0]
        raise ValidationError(
            f"transition does not sum to 1 at (t={t}, s={s}, a={a}) on simplex vertex {j}: {sums[t, s, a, j]}"
        )
    vertex_r = spec.reward_base[..., None] + spec.reward_coeff
    r_abs_max = float(np.abs(vertex_r).max())
    if d.n_constraints:
        vertex_c = spec.cost_base[..., None] + spec.cost_coeff
        c_abs_max = float(np.abs(vertex_c).max())
    else:
        c_abs_max = 0.0
    lip = spec.lipschitz if spec.lipschitz is not None else affine_lipschitz(spec)
    return EnvironmentModel(spec=spec, r_abs_max=r_abs_max, c_abs_max=c_abs_max, lipschitz=tuple(lip))


def affine_lipschitz(spec: AffineEnvSpec) -> tuple[float, float, float]:
    """l1-induced Lipschitz constants (C_p, C_r, C_c) of the coefficient blocks.

    Each constant is the largest column sum of absolute coefficients, where the
    column sum runs over (s, a) and the output component, maximized over t.
    """
    cp = np.abs(spec.trans_coeff).sum(axis=(1, 2, 3)).max(initial=0.0)
    cr = np.abs(spec.reward_coeff).sum(axis=(1, 2)).max(initial=0.0)
    if spec.dims.n_constraints:
        cc = np.abs(spec.cost_coeff).sum(axis=(0, 2, 3)).max(initial=0.0)
    else:
        cc = 0.0
    return float(cp), float(cr), float(cc)


def load_env_file(path) -> EnvironmentModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return load_affine_env(AffineEnvSpec.from_json(doc))


# ---------------------------------------------------------------------------
# Built-in SIS environments


def _sis_dynamics(T1: int):
    S, A, SA = 2, 2, 4
    iu = 1 * A + 0  # flat index of (I, U)
    base = np.zeros((T1, S, A, S))
    coeff = np.zeros((T1, S, A, S, SA))
    base[:, 0, 1] = [1.0, 0.0]  # S, D: stay susceptible
    base[:, 0, 0] = [1.0, 0.0]  # S, U: infected w.p. 0.9 L(I,U)
    coeff[:, 0, 0, 1, iu] = 0.9
    coeff[:, 0, 0, 0, iu] = -0.9
    base[:, 1, 1] = [0.5, 0.5]  # I, D: recover w.p. 0.5
    base[:, 1, 0] = [0.5, 0.5]  # I, U: recover w.p. 0.5 (1 - 0.9 L(I,U))
    coeff[:, 1, 0, 0, iu] = -0.45
    coeff[:, 1, 0, 1, iu] = 0.45
    reward = np.zeros((T1, S, A))
    reward[:, 1, :] -= 1.0
    reward[:, :, 1] -= 0.5
    return base, coeff, reward


def builtin_sis(T: int = 10, mu0_I: float = 0.5, gamma0: float = 0.25, constraint_kind: str = "agent_state"):
    """SIS model with one of three constraints, all encoded as ``cost <= threshold``.

    ``agent_action`` is a lower bound on the going-out frequency, so both its
    cost and threshold are negated.
    """
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not 0.0 <= mu0_I <= 1.0:
        raise ValidationError("mu0_I must lie in [0, 1]")
    if constraint_kind not in CONSTRAINT_KINDS:
        raise ValidationError(f"unknown constraint_kind {constraint_kind!r}; choose from {CONSTRAINT_KINDS}")
    T1 = T + 1
    base, coeff, reward = _sis_dynamics(T1)
    cost = np.zeros((1, T1, 2, 2))
    threshold = float(gamma0)
    if constraint_kind in ("agent_state", "pop_state"):
        cost[0, :, 1, :] = 1.0 / T1
    else:
        cost[0, :, :, 0] = -1.0 / T1
        threshold = -threshold
    spec = AffineEnvSpec(
        dims=GameDims(2, 2, T1, 1),
        mu0=np.array([1.0 - mu0_I, mu0_I]),
        gamma0=np.array([threshold]),
        trans_base=base,
        trans_coeff=coeff,
        reward_base=reward,
        reward_coeff=np.zeros((T1, 2, 2, 4)),
        cost_base=cost,
        cost_coeff=np.zeros((1, T1, 2, 2, 4)),
        population_level=constraint_kind == "pop_state",
        name=f"sis_{constraint_kind}",
    )
    return load_affine_env(spec)


def two_step_sis(gamma0: float, population_level: bool = False) -> EnvironmentModel:
    """Two-step SIS game starting fully infected, constraining only P(s_1 = I)."""
    T1 = 2
    base, coeff, reward = _sis_dynamics(T1)
    cost = np.zeros((1, T1, 2, 2))
    cost[0, 1, 1, :] = 1.0
    spec = AffineEnvSpec(
        dims=GameDims(2, 2, T1, 1),
        mu0=np.array([0.0, 1.0]),
        gamma0=np.array([float(gamma0)]),
        trans_base=base,
        trans_coeff=coeff,
        reward_base=reward,
        reward_coeff=np.zeros((T1, 2, 2, 4)),
        cost_base=cost,
        cost_coeff=np.zeros((1, T1, 2, 2, 4)),
        population_level=population_level,
        name="sis_two_step",
    )
    return load_affine_env(spec)


def without_constraints(env: EnvironmentModel) -> EnvironmentModel:
    """Same game with k = 0."""
    sp = env.spec
    T1, S, A, SA = sp.dims.horizon_len, sp.dims.n_states, sp.dims.n_actions, sp.dims.n_sa
    spec = replace(
        sp,
        dims=replace(sp.dims, n_constraints=0),
        gamma0=np.zeros(0),
        cost_base=np.zeros((0, T1, S, A)),
        cost_coeff=np.zeros((0, T1, S, A, SA)),
        population_level=False,
        name=sp.name + "_unconstrained",
    )
    return load_affine_env(spec)


def random_affine_env(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    horizon_len: int,
    n_constraints: int = 0,
    flow_weight: float = 0.5,
    gamma_slack: Optional[float] = None,
) -> EnvironmentModel:
    """Random valid affine game; each transition row mixes vertex distributions.

    Transitions at vertex ``j`` are ``(1 - w) q0 + w qj`` for random
    distributions q, which keeps every simplex point valid. Thresholds default
    to the cost of a random policy under the uniform flow, so the constraints
    are feasible.
    """
    S, A, T1, k = n_states, n_actions, horizon_len, n_constraints
    SA = S * A
    q0 = rng.dirichlet(np.ones(S), size=(T1, S, A))
    qv = rng.dirichlet(np.ones(S), size=(T1, S, A, SA))  # (T1,S,A,SA,S)
    w = flow_weight
    base = (1 - w) * q0
    coeff = w * np.moveaxis(qv, 3, 4)
    reward_base = rng.uniform(-1, 1, size=(T1, S, A))
    reward_coeff = rng.uniform(-0.5, 0.5, size=(T1, S, A, SA)) * w
    cost_base = rng.uniform(0, 1, size=(k, T1, S, A))
    cost_coeff = rng.uniform(0, 0.3, size=(k, T1, S, A, SA)) * w
    mu0 = rng.dirichlet(np.ones(S))
    spec = AffineEnvSpec(
        dims=GameDims(S, A, T1, k),
        mu0=mu0,
        gamma0=np.zeros(k),
        trans_base=base,
        trans_coeff=coeff,
        reward_base=reward_base,
        reward_coeff=reward_coeff,
        cost_base=cost_base,
        cost_coeff=cost_coeff,
        name="random",
    )
    env = load_affine_env(spec)
    if k:
        uniform = np.full((T1, S, A), 1.0 / A)
        L = flow_from_policy(uniform, env)
        pi = rng.dirichlet(np.ones(A), size=(T1, S))
        d = occupation_from_policy(pi, L, env)
        gamma = np.einsum("ktsa,tsa->k", env.costs(L), d)
        gamma = gamma + (gamma_slack if gamma_slack is not None else rng.uniform(0.05, 0.5, size=k))
        env = replace(env, spec=replace(env.spec, gamma0=gamma), gamma0=gamma)
    return env


# ---------------------------------------------------------------------------
# Flow, occupation measure and policy conversions


def uniform_policy(dims: GameDims) -> Policy:
    return np.full(dims.shape, 1.0 / dims.n_actions)


def check_policy(pi: np.ndarray, dims: GameDims) -> None:
    if pi.shape != dims.shape:
        raise ValidationError(f"policy shape {pi.shape} does not match game {dims.shape}")
    if np.any(pi < -MASS_TOL) or np.any(np.abs(pi.sum(axis=2) - 1.0) > MASS_TOL):
        raise ValidationError("policy rows must be probability vectors")


def flow_from_policy(pi: Policy, env: EnvironmentModel) -> MeanFieldFlow:
    """Population flow induced by ``pi``, with transitions driven by the flow itself."""
    check_policy(pi, env.dims)
    L = np.empty(env.dims.shape)
    L[0] = pi[0] * env.mu0[:, None]
    for t in range(env.dims.horizon_len - 1):
        marg = np.einsum("sa,sai->i", L[t], env.transition(t, L[t]))
        L[t + 1] = pi[t + 1] * marg[:, None]
    return L


def occupation_from_policy(pi: Policy, L: MeanFieldFlow, env: EnvironmentModel) -> OccupationMeasure:
    """Occupation measure of one agent playing ``pi`` while the population follows ``L``."""
    check_policy(pi, env.dims)
    if L.shape != env.dims.shape:
        raise ValidationError(f"flow shape {L.shape} does not match game {env.dims.shape}")
    P = env.transitions(L)
    d = np.empty(env.dims.shape)
    d[0] = pi[0] * env.mu0[:, None]
    for t in range(env.dims.horizon_len - 1):
        marg = np.einsum("sa,sai->i", d[t], P[t])
        d[t + 1] = pi[t + 1] * marg[:, None]
    return d


def policy_from_occupation(d: OccupationMeasure) -> Policy:
    """Row-normalize ``d``; states with (numerically) zero mass get the uniform row."""
    d = np.asarray(d, dtype=float)
    mass = d.sum(axis=2, keepdims=True)
    uniform = np.full_like(d, 1.0 / d.shape[2])
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > DEAD_STATE_TOL, d / np.where(mass > DEAD_STATE_TOL, mass, 1.0), uniform)
    return np.clip(pi, 0.0, None)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def project_flow(raw: np.ndarray) -> MeanFieldFlow:
    """Project each time slice onto the simplex over S x A."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValidationError("project_flow received non-finite entries")
    T1 = raw.shape[0]
    return project_simplex(raw.reshape(T1, -1)).reshape(raw.shape)


def is_flow(L: np.ndarray, tol: float = MASS_TOL) -> bool:
    return bool(np.all(L >= -tol) and np.all(np.abs(L.reshape(L.shape[0], -1).sum(axis=1) - 1.0) <= tol))
