"""Constrained mean-field occupation-measure optimization (CMFOMO).

The search runs over the flow ``L`` and the multiplier ``lambda``. The
remaining variables ``(y, z, w)`` are recomputed at every iteration from the
current ``(L, lambda)``: ``(y, z)`` by backward induction on the Lagrangian
reward and ``w`` as the constraint slack.

Two analytic gradients are available:

* ``"analytic"``: partial gradient with ``(y, z, w)`` held fixed, the
  block-coordinate reading of the alternating scheme;
* ``"reduced"``: total gradient of the objective after substituting the
  inner solution, i.e. differentiating through the backward induction.

With ``(y, z, w)`` frozen the multiplier only feels the complementarity
term, which pulls it toward 0; the reduced gradient also sees how the
multiplier reshapes the value function and can move it away from 0.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import lp as lpmod
from .core import (
    EnvironmentModel,
    ValidationError,
    flow_from_policy,
    policy_from_occupation,
    project_flow,
    uniform_policy,
)
from .metrics import gaps

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12
GRADIENT_MODES = ("analytic", "reduced", "finite_diff")


@dataclass(frozen=True)
class CmfomoCoeffs:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3, self.c4, self.c5) <= 0:
            raise ValidationError("CMFOMO coefficients must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3, self.c4, self.c5])


@dataclass(frozen=True)
class BoundBox:
    beta_y: float
    beta_z: float
    beta_lambda: float
    delta: float
    gamma0: np.ndarray

    @classmethod
    def for_env(cls, env: EnvironmentModel, delta: Optional[float], population: bool = False) -> "BoundBox":
        d = env.dims
        S, SA, T1 = d.n_states, d.n_sa, d.horizon_len
        r = env.r_abs_max
        if population:
            factor = 1.0
            beta_lam = 0.0
            delta = float("nan") if delta is None else delta
        else:
            if delta is None or delta <= 0:
                raise ValidationError("agent-level bounds need a positive strict-feasibility margin delta")
            factor = 1.0 + T1 * env.c_abs_max / delta
            beta_lam = T1 * r / delta
        return cls(
            beta_y=S * T1 * (T1 + 1) / 2 * r * factor,
            beta_z=SA * (T1**2 - T1 + 2) * r * factor,
            beta_lambda=beta_lam,
            delta=float(delta),
            gamma0=env.gamma0.copy(),
        )


@dataclass
class CmfomoState:
    L: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    w: np.ndarray
    iteration: int = 0
    objective: float = float("nan")
    terms: np.ndarray = field(default_factory=lambda: np.full(5, np.nan))
    rescale: float = 1.0

    def copy(self) -> "CmfomoState":
        return CmfomoState(
            L=self.L.copy(),
            y=self.y.copy(),
            z=self.z.copy(),
            lam=self.lam.copy(),
            w=self.w.copy(),
            iteration=self.iteration,
            objective=self.objective,
            terms=self.terms.copy(),
            rescale=self.rescale,
        )


@dataclass(frozen=True)
class SolveConfig:
    coeffs: CmfomoCoeffs = CmfomoCoeffs()
    learning_rate: float = 5e-3
    max_iters: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tolerance: float = 1e-8
    tighten_eps0: float = 0.0
    seed: int = 0
    gradient_mode: str = "analytic"
    trace_every: int = 100
    lambda_init: float = 0.0
    delta: Optional[float] = None
    delta_floor: float = 1e-3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValidationError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.tighten_eps0 < 0:
            raise ValidationError("tighten_eps0 must be >= 0")
        if self.lambda_init < 0:
            raise ValidationError("lambda_init must be >= 0")
        if self.max_iters < 1 or self.trace_every < 1:
            raise ValidationError("max_iters and trace_every must be positive")

    def to_json(self) -> dict:
        out = asdict(self)
        out["coeffs"] = asdict(self.coeffs)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "SolveConfig":
        doc = dict(doc)
        doc["coeffs"] = CmfomoCoeffs(**doc.get("coeffs", {}))
        return cls(**doc)


# ---------------------------------------------------------------------------
# Objective


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > ZERO_NORM else np.zeros_like(v)


def _norm(v: np.ndarray) -> float:
    n = float(np.linalg.norm(v))
    return n if n > ZERO_NORM else 0.0


def objective_terms(
    env: EnvironmentModel, state: CmfomoState, coeffs: CmfomoCoeffs, population: bool = False
) -> np.ndarray:
    """The five weighted summands of the CMFOMO objective.

    In population mode the multiplier is ignored and the fifth term is 0.
    """
    data = lpmod.assemble(env, state.L)
    x = state.L.ravel()
    lam = np.zeros_like(state.lam) if population else state.lam
    slack = env.gamma0 - data.C @ x
    t = np.array(
        [
            coeffs.c1 * _norm(data.A.T @ state.y + state.z + data.r - data.C.T @ lam),
            coeffs.c2 * _norm(data.A @ x - data.b),
            coeffs.c3 * float(state.z @ x),
            coeffs.c4 * _norm(slack - state.w),
            0.0 if population else coeffs.c5 * abs(float(lam @ slack)),
        ]
    )
    return t


def objective(env: EnvironmentModel, state: CmfomoState, coeffs: CmfomoCoeffs, population: bool = False):
    terms = objective_terms(env, state, coeffs, population)
    return float(terms.sum()), terms


# ---------------------------------------------------------------------------
# Inner update of (y, z, w)


def slack_weights(env: EnvironmentModel, L: np.ndarray) -> np.ndarray:
    """w = max(0, gamma0 - C_L L), capped at gamma0 where gamma0 >= 0."""
    slack = env.gamma0 - np.einsum("ktsa,tsa->k", env.costs(L), L)
    w = np.maximum(slack, 0.0)
    cap = np.where(env.gamma0 >= 0, env.gamma0, np.inf)
    return np.minimum(w, cap)


def inner_dual_update(env: EnvironmentModel, L: np.ndarray, lam: np.ndarray, box: BoundBox):
    """Return ``(y, z, w, rescale, dual)`` for the current ``(L, lambda)``.

    ``(y, z)`` are scaled by one common factor when either exceeds its l1
    bound, so that ``A^T y + z`` stays proportional to the adjusted reward.
    """
    dual = lpmod.solve_dual_backward(env, L, lam)
    ny, nz = np.abs(dual.y).sum(), np.abs(dual.z).sum()
    rho = 1.0
    if ny > box.beta_y:
        rho = min(rho, box.beta_y / ny)
    if nz > box.beta_z:
        rho = min(rho, box.beta_z / nz)
    if rho < 1.0:
        log.debug("dual variables rescaled by %.6g (|y|_1=%.4g, |z|_1=%.4g)", rho, ny, nz)
    w = slack_weights(env, L)
    return dual.y * rho, dual.z * rho, w, rho, dual


# ---------------------------------------------------------------------------
# Gradients


def _cost_total_grad(env: EnvironmentModel, L: np.ndarray, Cvals: np.ndarray) -> np.ndarray:
    """G[k] = d(C_L L)_k / dL, shape (k, T1, S, A)."""
    via_coeff = np.einsum("ktsaj,tsa->ktj", env.cost_jacobian, L).reshape(Cvals.shape)
    return Cvals + via_coeff


def _consistency_grad(env: EnvironmentModel, L: np.ndarray, P: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Gradient of u2 . (A_L L - b) with respect to L."""
    T1, S, A = L.shape
    g = np.zeros_like(L)
    u2 = u2.reshape(T1, S)
    dP = env.transition_jacobian
    for t in range(T1 - 1):
        # d/dL_t(s,a) of sum_i u_i sum_{s'a'} p(i|s'a',L_t) L_t(s'a')
        g[t] += P[t] @ u2[t]
        g[t] += np.einsum("i,xyij,xy->j", u2[t], dP[t], L[t]).reshape(S, A)
        g[t + 1] -= u2[t][:, None]
    g[0] += u2[T1 - 1][:, None]
    return g


def gradient(env: EnvironmentModel, state: CmfomoState, coeffs: CmfomoCoeffs, population: bool = False):
    """Partial gradient of the objective in ``(L, lambda)`` with ``(y, z, w)`` fixed."""
    L, y, z, lam, w = state.L, state.y, state.z, state.lam, state.w
    T1, S, A = L.shape
    k = lam.size
    if population:
        lam = np.zeros(k)
    P = env.transitions(L)
    r = env.rewards(L)
    Cv = env.costs(L)
    radj = r - np.einsum("k,ktsa->tsa", lam, Cv)
    data = lpmod.assemble(env, L)
    x = L.ravel()

    gL = np.zeros_like(L)
    glam = np.zeros(k)

    # term 1: ||A^T y + z + r - C^T lam||
    R1 = data.A.T @ y + z + radj.ravel()
    u1 = _unit(R1).reshape(T1, S, A)
    if np.any(u1):
        yb = y.reshape(T1, S)
        for t in range(T1):
            J = env.reward_jacobian[t] - np.einsum("k,ksaj->saj", lam, env.cost_jacobian[:, t])
            if t < T1 - 1:
                J = J + np.einsum("saij,i->saj", env.transition_jacobian[t], yb[t])
            gL[t] += coeffs.c1 * np.einsum("sa,saj->j", u1[t], J).reshape(S, A)
        if not population:
            glam += -coeffs.c1 * np.einsum("ktsa,tsa->k", Cv, u1)

    # term 2: ||A_L L - b||
    u2 = _unit(data.A @ x - data.b)
    if np.any(u2):
        gL += coeffs.c2 * _consistency_grad(env, L, P, u2)

    # term 3: z^T L
    gL += coeffs.c3 * z.reshape(T1, S, A)

    if k:
        G = _cost_total_grad(env, L, Cv)
        slack = env.gamma0 - data.C @ x
        u4 = _unit(slack - w)
        gL -= coeffs.c4 * np.einsum("k,ktsa->tsa", u4, G)
        if not population:
            s5 = np.sign(lam @ slack)
            gL -= coeffs.c5 * s5 * np.einsum("k,ktsa->tsa", lam, G)
            glam += coeffs.c5 * s5 * slack
    return gL, glam


def reduced_gradient(
    env: EnvironmentModel, L: np.ndarray, lam: np.ndarray, coeffs: CmfomoCoeffs, box: BoundBox, population: bool = False
):
    """Gradient of the objective with ``(y, z, w)`` replaced by the inner solution.

    The greedy actions and the rescale factor are held at their current
    values, so this is exact wherever backward induction has no ties.
    """
    T1, S, A = L.shape
    k = lam.size
    lam_eff = np.zeros(k) if population else lam
    y, z, w, rho, dual = inner_dual_update(env, L, lam_eff, box)
    state = CmfomoState(L=L, y=y, z=z, lam=lam, w=w, rescale=rho)
    P = env.transitions(L)
    Cv = env.costs(L)
    radj = dual.adjusted_reward
    dP = env.transition_jacobian
    dR = env.reward_jacobian - np.einsum("k,ktsaj->tsaj", lam_eff, env.cost_jacobian)

    gL = np.zeros_like(L)
    glam = np.zeros(k)

    # term 1 equals (1 - rho) ||r~||
    if rho < 1.0:
        u1 = _unit(radj.ravel()).reshape(T1, S, A) * (1.0 - rho)
        gL += coeffs.c1 * np.einsum("tsa,tsaj->tj", u1, dR).reshape(L.shape)
        if not population:
            glam += -coeffs.c1 * np.einsum("ktsa,tsa->k", Cv, u1)

    # term 3 = rho * sum L (V - Q): reverse sweep through the backward induction
    V, Q, greedy = dual.V, dual.Q, dual.greedy
    bar_V = np.zeros((T1, S))
    bar_Q = -L.copy()
    bar_V += L.sum(axis=2)
    bar_r = np.zeros((T1, S, A))
    bar_P = np.zeros((T1, S, A, S))
    rows = np.arange(S)
    for t in range(T1):
        bar_Q[t, rows, greedy[t]] += bar_V[t]
        bar_r[t] = bar_Q[t]
        if t < T1 - 1:
            bar_P[t] = bar_Q[t][:, :, None] * V[t + 1][None, None, :]
            bar_V[t + 1] += np.einsum("sa,sai->i", bar_Q[t], P[t])
    g3 = (V[:, :, None] - Q).copy()
    g3 += np.einsum("tsa,tsaj->tj", bar_r, dR).reshape(L.shape)
    g3 += np.einsum("tsai,tsaij->tj", bar_P, dP).reshape(L.shape)
    gL += coeffs.c3 * rho * g3
    if not population and k:
        glam += coeffs.c3 * rho * -np.einsum("tsa,ktsa->k", bar_r, Cv)

    if k:
        x = L.ravel()
        G = _cost_total_grad(env, L, Cv)
        slack = env.gamma0 - Cv.reshape(k, -1) @ x
        u4 = _unit(slack - w)
        gL -= coeffs.c4 * np.einsum("k,ktsa->tsa", u4, G)
        if not population:
            s5 = np.sign(lam @ slack)
            gL -= coeffs.c5 * s5 * np.einsum("k,ktsa->tsa", lam, G)
            glam += coeffs.c5 * s5 * slack

    # term 2 does not involve the inner variables
    data_b = lpmod.assemble(env, L)
    u2 = _unit(data_b.A @ L.ravel() - data_b.b)
    if np.any(u2):
        gL += coeffs.c2 * _consistency_grad(env, L, P, u2)
    return gL, glam, state


def reduced_objective(
    env: EnvironmentModel, L: np.ndarray, lam: np.ndarray, coeffs: CmfomoCoeffs, box: BoundBox, population: bool = False
):
    y, z, w, rho, _ = inner_dual_update(env, L, np.zeros_like(lam) if population else lam, box)
    state = CmfomoState(L=L, y=y, z=z, lam=lam, w=w, rescale=rho)
    return objective(env, state, coeffs, population)


def finite_diff_gradient(fun, L: np.ndarray, lam: np.ndarray, h: float = 1e-6):
    """Central differences of ``fun(L, lam) -> float`` in every coordinate."""
    gL = np.zeros_like(L)
    glam = np.zeros_like(lam)
    for idx in np.ndindex(L.shape):
        Lp, Lm = L.copy(), L.copy()
        Lp[idx] += h
        Lm[idx] -= h
        gL[idx] = (fun(Lp, lam) - fun(Lm, lam)) / (2 * h)
    for i in range(lam.size):
        lp_, lm_ = lam.copy(), lam.copy()
        lp_[i] += h
        lm_[i] -= h
        glam[i] = (fun(L, lp_) - fun(L, lm_)) / (2 * h)
    return gL, glam


# ---------------------------------------------------------------------------
# Solver


class Adam:
    """Adam on a dict of arrays; bias-corrected, constant step size."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = {}
        for key, p in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            out[key] = p - self.lr * (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)
        return out


@dataclass
class TraceRow:
    iteration: int
    objective: float
    best_objective: float
    terms: np.ndarray
    g_opt: float = float("nan")
    g_fea: float = float("nan")


@dataclass
class SolveResult:
    state: CmfomoState
    policy: np.ndarray
    trace: list
    config: SolveConfig
    box: BoundBox
    converged: bool
    population: bool = False
    gamma0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma0_solved: np.ndarray = field(default_factory=lambda: np.zeros(0))
    env_name: str = ""

    @property
    def objective(self) -> float:
        return self.state.objective

    def trace_columns(self) -> dict[str, np.ndarray]:
        tr = self.trace
        cols = {
            "iter": np.array([r.iteration for r in tr], dtype=int),
            "objective": np.array([r.objective for r in tr]),
        }
        terms = np.array([r.terms for r in tr]).reshape(len(tr), 5)
        for i in range(5):
            cols[f"term{i + 1}"] = terms[:, i]
        cols["g_opt"] = np.array([r.g_opt for r in tr])
        cols["g_fea"] = np.array([r.g_fea for r in tr])
        cols["best_objective"] = np.array([r.best_objective for r in tr])
        return cols

    def to_json(self) -> dict:
        st = self.state
        return {
            "env": self.env_name,
            "population_level": self.population,
            "converged": self.converged,
            "objective": st.objective,
            "terms": st.terms.tolist(),
            "iteration": st.iteration,
            "gamma0": self.gamma0.tolist(),
            "gamma0_solved": self.gamma0_solved.tolist(),
            "policy": self.policy.tolist(),
            "flow": st.L.tolist(),
            "lambda": st.lam.tolist(),
            "y": st.y.tolist(),
            "z": st.z.tolist(),
            "w": st.w.tolist(),
            "rescale": st.rescale,
            "box": {
                "beta_y": self.box.beta_y,
                "beta_z": self.box.beta_z,
                "beta_lambda": self.box.beta_lambda,
                "delta": _finite_or_none(self.box.delta),
            },
            "config": self.config.to_json(),
            "trace": {k: [_finite_or_none(float(x)) for x in v] for k, v in self.trace_columns().items()},
        }

    def write_trace_csv(self, path) -> None:
        cols = self.trace_columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(list(cols))
            for row in zip(*cols.values()):
                writer.writerow([_csv_number(x) for x in row])


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def _csv_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _resolve_delta(env: EnvironmentModel, L0: np.ndarray, config: SolveConfig) -> float:
    if config.delta is not None:
        return float(config.delta)
    if env.dims.n_constraints == 0:
        return 1.0
    rep = lpmod.check_strict_feasibility(env, L0)
    delta = rep.max_delta
    if not math.isfinite(delta) or delta < config.delta_floor:
        log.warning(
            "strict feasibility margin %.3g at the initial flow is below %.3g; using the floor",
            delta,
            config.delta_floor,
        )
        delta = config.delta_floor
    return float(delta)


def _run(env: EnvironmentModel, config: SolveConfig, population: bool) -> SolveResult:
    original = env
    k = env.dims.n_constraints
    if config.tighten_eps0 > 0:
        env = env.with_gamma0(env.gamma0 - config.tighten_eps0)
    coeffs = config.coeffs
    pi0 = uniform_policy(env.dims)
    L = flow_from_policy(pi0, env)
    lam = np.full(k, 0.0 if population else config.lambda_init)
    delta = None if population else _resolve_delta(env, L, config)
    box = BoundBox.for_env(env, delta, population)
    lam = np.minimum(lam, box.beta_lambda)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    def evaluate(L_, lam_):
        y, z, w, rho, _ = inner_dual_update(env, L_, np.zeros(k) if population else lam_, box)
        st = CmfomoState(L=L_, y=y, z=z, lam=lam_, w=w, rescale=rho)
        val, terms = objective(env, st, coeffs, population)
        st.objective, st.terms = val, terms
        return st

    best: Optional[CmfomoState] = None
    trace: list[TraceRow] = []
    converged = False
    for it in range(config.max_iters + 1):
        if config.gradient_mode == "reduced":
            gL, glam, state = reduced_gradient(env, L, lam, coeffs, box, population)
            state.objective, state.terms = objective(env, state, coeffs, population)
        else:
            state = evaluate(L, lam)
            if config.gradient_mode == "analytic":
                gL, glam = gradient(env, state, coeffs, population)
            else:
                gL, glam = finite_diff_gradient(lambda a, b: evaluate(a, b).objective, L, lam)
        state.iteration = it
        if not math.isfinite(state.objective):
            raise FloatingPointError(f"non-finite objective at iteration {it}: terms={state.terms}")
        if best is None or state.objective < best.objective:
            best = state.copy()
        row = TraceRow(it, state.objective, best.objective, state.terms.copy())
        if it % config.trace_every == 0 or it == config.max_iters:
            rep = gaps(original, policy_from_occupation(L))
            row.g_opt, row.g_fea = rep.g_opt, rep.g_fea
        trace.append(row)
        if state.objective <= config.tolerance:
            converged = True
            break
        if it == config.max_iters:
            break
        params = {"L": L, "lam": lam}
        grads = {"L": gL, "lam": glam}
        if population:
            params.pop("lam")
            grads.pop("lam")
        new = opt.step(params, grads)
        L = project_flow(new["L"])
        if not population:
            lam = np.clip(new["lam"], 0.0, box.beta_lambda)
    if trace and math.isnan(trace[-1].g_opt):
        rep = gaps(original, policy_from_occupation(L))
        trace[-1].g_opt, trace[-1].g_fea = rep.g_opt, rep.g_fea
    assert best is not None
    return SolveResult(
        state=best,
        policy=policy_from_occupation(best.L),
        trace=trace,
        config=config,
        box=box,
        converged=converged,
        population=population,
        gamma0=original.gamma0.copy(),
        gamma0_solved=env.gamma0.copy(),
        env_name=original.name,
    )


def solve(env: EnvironmentModel, config: SolveConfig = SolveConfig()) -> SolveResult:
    """Projected Adam on ``(L, lambda)`` with the inner ``(y, z, w)`` update."""
    return _run(env, config, population=False)


def solve_population(env: EnvironmentModel, config: SolveConfig = SolveConfig()) -> SolveResult:
    """Population-level variant: ``lambda = 0``, no complementarity term, no delta."""
    if not env.population_level and env.dims.n_constraints:
        raise ValidationError("solve_population needs a population-level environment")
    return _run(env, config, population=True)


# ---------------------------------------------------------------------------
# Characteristicity certificate


@dataclass(frozen=True)
class Certificate:
    objective_actual: float
    objective_bound: float
    terms: np.ndarray
    eps1: float
    eps2: float
    delta: float
    holds: bool
    state: CmfomoState


def certify_from_policy(
    env: EnvironmentModel, pi: np.ndarray, coeffs: CmfomoCoeffs = CmfomoCoeffs(), delta: Optional[float] = None
) -> Certificate:
    """Build the CMFOMO point attached to ``pi`` and check the objective bound.

    The point uses ``L = Psi(pi)``, exact LP duals at ``L`` and ``w`` equal
    to the constraint slack.
    """
    L = flow_from_policy(pi, env)
    res = lpmod.solve_cmdp_simplex(env, L)
    if not res.optimal:
        raise ValidationError("no feasible policy under Psi(pi): the constrained MDP at this flow is infeasible")
    k = env.dims.n_constraints
    if delta is None:
        delta = lpmod.check_strict_feasibility(env, L).max_delta if k else 1.0
    state = CmfomoState(L=L, y=res.y, z=res.z, lam=res.lambda_opt, w=slack_weights(env, L))
    val, terms = objective(env, state, coeffs)
    state.objective, state.terms = val, terms
    rep = gaps(env, pi)
    eps1, eps2 = abs(rep.g_opt), rep.g_fea
    T1 = env.dims.horizon_len
    lam_bound = T1 * env.r_abs_max / delta if delta > 0 else float("inf")
    bound = eps1 * (coeffs.c3 + 2 * coeffs.c5)
    if eps2 > 0:
        bound += eps2 * (math.sqrt(k) * lam_bound * (coeffs.c3 + coeffs.c5) + coeffs.c4)
    return Certificate(
        objective_actual=val,
        objective_bound=bound,
        terms=terms,
        eps1=eps1,
        eps2=eps2,
        delta=float(delta),
        holds=bool(val <= bound + 1e-8),
        state=state,
    )
