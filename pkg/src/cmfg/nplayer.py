"""Finite N-player version of a mean-field game.

N agents share the environment; at each step every agent samples an action
from its own policy, the empirical state-action distribution ``L^N_t`` is
formed and all agents transition with ``p_t(. | s, a, L^N_t)``. Player 1
(index 0) is the one whose value and costs are tracked, optionally playing a
deviation policy.

Randomness: every episode draws its uniforms from two counter-based Philox
streams keyed by ``(seed, episode)``, one for player 1 and one for the rest.
Results are therefore independent of chunking, and comparisons between
player-1 policies use common random numbers for players 2..N.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import lp as lpmod
from .core import (
    EnvironmentModel,
    ValidationError,
    check_policy,
    flow_from_policy,
    policy_from_occupation,
)
from .metrics import bound_constants

EXACT_MAX_PROFILES = 4096
DETERMINISTIC_MENU_MAX = 16


@dataclass(frozen=True)
class NPlayerConfig:
    n_players: int = 100
    n_episodes: int = 1000
    seed: int = 0
    deviation_policy: Optional[np.ndarray] = None
    chunk_size: int = 250

    def __post_init__(self):
        if self.n_players < 1:
            raise ValidationError("n_players must be >= 1")
        if self.n_episodes < 1:
            raise ValidationError("n_episodes must be >= 1")
        if self.chunk_size < 1:
            raise ValidationError("chunk_size must be >= 1")

    def with_players(self, n: int) -> "NPlayerConfig":
        return NPlayerConfig(n, self.n_episodes, self.seed, self.deviation_policy, self.chunk_size)


@dataclass(frozen=True)
class EpisodeBatchStats:
    n_players: int
    n_episodes: int
    v1_mean: float
    v1_stderr: float
    cost1_mean: np.ndarray
    cost1_stderr: np.ndarray
    flow_deviation: float
    flow_deviation_stderr: float
    g_fea_1: float


@dataclass(frozen=True)
class _EpisodeSamples:
    v1: np.ndarray  # (M,)
    cost1: np.ndarray  # (M, k)
    deviation: np.ndarray  # (M, T1): ||L^N_t - Psi_t||_1


def _stderr(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if n < 2:
        return np.zeros(x.shape[1:])
    return x.std(axis=0, ddof=1) / math.sqrt(n)


def _episode_uniforms(seed: int, episode: int, n_players: int, n_cols: int):
    ss = np.random.SeedSequence(seed, spawn_key=(episode,))
    own, rest = ss.spawn(2)
    u1 = np.random.Generator(np.random.Philox(own)).random(n_cols)
    ur = np.random.Generator(np.random.Philox(rest)).random((n_cols, n_players - 1))
    return u1, ur


def _sample(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling along the last axis of ``cdf``."""
    idx = (u[..., None] > cdf).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def _run_chunk(env: EnvironmentModel, pi: np.ndarray, pi1: np.ndarray, ref: np.ndarray, U: np.ndarray):
    """Simulate a chunk of episodes. ``U`` has shape (E, 2*T1, N)."""
    sp = env.spec
    E, _, N = U.shape
    T1, S, A = env.dims.shape
    SA = S * A
    k = env.dims.n_constraints
    mu_cdf = np.cumsum(env.mu0)
    pi_cdf = np.cumsum(pi, axis=2)
    pi1_cdf = np.cumsum(pi1, axis=2)

    s = _sample(mu_cdf, U[:, 0, :])
    v1 = np.zeros(E)
    c1 = np.zeros((E, k))
    dev = np.zeros((E, T1))
    for t in range(T1):
        u = U[:, 1 + 2 * t, :]
        a = _sample(pi_cdf[t][s], u)
        a[:, 0] = _sample(pi1_cdf[t][s[:, 0]], u[:, 0])
        flat = s * A + a
        counts = np.bincount((np.arange(E)[:, None] * SA + flat).ravel(), minlength=E * SA).reshape(E, SA)
        LN = counts / N
        dev[:, t] = np.abs(LN - ref[t].ravel()).sum(axis=1)
        s1, a1 = s[:, 0], a[:, 0]
        r = sp.reward_base[t][s1, a1] + np.einsum("ej,ej->e", sp.reward_coeff[t][s1, a1], LN)
        v1 += r
        if k:
            c1 += sp.cost_base[:, t][:, s1, a1].T + np.einsum("kej,ej->ek", sp.cost_coeff[:, t][:, s1, a1], LN)
        if t < T1 - 1:
            P = sp.trans_base[t][s, a] + np.einsum("enij,ej->eni", sp.trans_coeff[t][s, a], LN)
            s = _sample(np.cumsum(P, axis=2), U[:, 2 + 2 * t, :])
    return v1, c1, dev


def _simulate_samples(env: EnvironmentModel, pi_shared: np.ndarray, config: NPlayerConfig) -> _EpisodeSamples:
    check_policy(pi_shared, env.dims)
    pi1 = pi_shared if config.deviation_policy is None else np.asarray(config.deviation_policy, float)
    check_policy(pi1, env.dims)
    ref = flow_from_policy(pi_shared, env)
    T1 = env.dims.horizon_len
    N, M = config.n_players, config.n_episodes
    n_cols = 2 * T1
    v1 = np.empty(M)
    c1 = np.empty((M, env.dims.n_constraints))
    dev = np.empty((M, T1))
    for start in range(0, M, config.chunk_size):
        stop = min(M, start + config.chunk_size)
        U = np.empty((stop - start, n_cols, N))
        for e in range(start, stop):
            u1, ur = _episode_uniforms(config.seed, e, N, n_cols)
            U[e - start, :, 0] = u1
            U[e - start, :, 1:] = ur
        v1[start:stop], c1[start:stop], dev[start:stop] = _run_chunk(env, pi_shared, pi1, ref, U)
    return _EpisodeSamples(v1, c1, dev)


def _stats(env: EnvironmentModel, samp: _EpisodeSamples, config: NPlayerConfig) -> EpisodeBatchStats:
    dev_mean = samp.deviation.mean(axis=0)
    t_max = int(np.argmax(dev_mean))
    cost_mean = samp.cost1.mean(axis=0)
    return EpisodeBatchStats(
        n_players=config.n_players,
        n_episodes=config.n_episodes,
        v1_mean=float(samp.v1.mean()),
        v1_stderr=float(_stderr(samp.v1)),
        cost1_mean=cost_mean,
        cost1_stderr=_stderr(samp.cost1),
        flow_deviation=float(dev_mean[t_max]),
        flow_deviation_stderr=float(_stderr(samp.deviation[:, t_max])),
        g_fea_1=float(np.linalg.norm(np.minimum(0.0, env.gamma0 - cost_mean))),
    )


def simulate(env: EnvironmentModel, pi_shared: np.ndarray, config: NPlayerConfig) -> EpisodeBatchStats:
    """Monte Carlo statistics of player 1 over ``config.n_episodes`` episodes."""
    return _stats(env, _simulate_samples(env, pi_shared, config), config)


# ---------------------------------------------------------------------------
# Exact evaluation for tiny games


def exact_player1(env: EnvironmentModel, pi_shared: np.ndarray, pi1: np.ndarray, n_players: int):
    """Exact expected value and cumulative costs of player 1 by a forward pass
    over the distribution of joint state profiles."""
    T1, S, A = env.dims.shape
    N = n_players
    if (S * A) ** N > EXACT_MAX_PROFILES:
        raise ValidationError(f"exact mode needs (S*A)^N <= {EXACT_MAX_PROFILES}")
    sp = env.spec
    k = env.dims.n_constraints
    dist = {}
    for prof in itertools.product(range(S), repeat=N):
        p = float(np.prod(env.mu0[list(prof)]))
        if p > 0:
            dist[prof] = p
    value = 0.0
    cost = np.zeros(k)
    for t in range(T1):
        nxt: dict = {}
        for prof, p in dist.items():
            for acts in itertools.product(range(A), repeat=N):
                q = p * pi1[t, prof[0], acts[0]]
                for i in range(1, N):
                    q *= pi_shared[t, prof[i], acts[i]]
                if q == 0.0:
                    continue
                LN = np.zeros(S * A)
                for si, ai in zip(prof, acts):
                    LN[si * A + ai] += 1.0 / N
                s1, a1 = prof[0], acts[0]
                value += q * (sp.reward_base[t, s1, a1] + sp.reward_coeff[t, s1, a1] @ LN)
                if k:
                    cost += q * (sp.cost_base[:, t, s1, a1] + sp.cost_coeff[:, t, s1, a1] @ LN)
                if t == T1 - 1:
                    continue
                P = [sp.trans_base[t, si, ai] + sp.trans_coeff[t, si, ai] @ LN for si, ai in zip(prof, acts)]
                for nprof in itertools.product(range(S), repeat=N):
                    w = q
                    for i in range(N):
                        w *= P[i][nprof[i]]
                    if w > 0.0:
                        nxt[nprof] = nxt.get(nprof, 0.0) + w
        dist = nxt
    return float(value), cost


@dataclass(frozen=True)
class DeviationGain:
    gain: float
    stderr: float
    g_fea_dev: float
    v_dev: float
    v_shared: float
    cost_dev: np.ndarray
    exact: bool = False


def deviation_gain(
    env: EnvironmentModel, pi_shared: np.ndarray, pi_dev: np.ndarray, config: NPlayerConfig, exact: bool = False
) -> DeviationGain:
    """Value improvement of player 1 switching from ``pi_shared`` to ``pi_dev``.

    Monte Carlo estimates pair the two runs episode by episode with common
    random numbers; ``exact=True`` enumerates all joint outcomes instead.
    """
    if exact:
        v0, _ = exact_player1(env, pi_shared, pi_shared, config.n_players)
        v1, c1 = exact_player1(env, pi_shared, pi_dev, config.n_players)
        g_fea = float(np.linalg.norm(np.minimum(0.0, env.gamma0 - c1)))
        return DeviationGain(v1 - v0, 0.0, g_fea, v1, v0, c1, exact=True)
    base_cfg = NPlayerConfig(config.n_players, config.n_episodes, config.seed, None, config.chunk_size)
    return _paired_gain(env, pi_shared, pi_dev, config, _simulate_samples(env, pi_shared, base_cfg))


def _paired_gain(env, pi_shared, pi_dev, config: NPlayerConfig, base: _EpisodeSamples) -> DeviationGain:
    dev_cfg = NPlayerConfig(config.n_players, config.n_episodes, config.seed, pi_dev, config.chunk_size)
    dev = _simulate_samples(env, pi_shared, dev_cfg)
    diff = dev.v1 - base.v1
    cost = dev.cost1.mean(axis=0)
    return DeviationGain(
        gain=float(diff.mean()),
        stderr=float(_stderr(diff)),
        g_fea_dev=float(np.linalg.norm(np.minimum(0.0, env.gamma0 - cost))),
        v_dev=float(dev.v1.mean()),
        v_shared=float(base.v1.mean()),
        cost_dev=cost,
    )


# ---------------------------------------------------------------------------
# Approximate-equilibrium certificate


def deterministic_policies(env: EnvironmentModel):
    T1, S, A = env.dims.shape
    for choice in itertools.product(range(A), repeat=T1 * S):
        pi = np.zeros((T1, S, A))
        pi.reshape(T1 * S, A)[np.arange(T1 * S), choice] = 1.0
        yield pi


def mean_field_best_response(env: EnvironmentModel, pi_star: np.ndarray) -> np.ndarray:
    """Optimal policy of the constrained MDP induced by ``Psi(pi_star)``."""
    L = flow_from_policy(pi_star, env)
    res = lpmod.solve_cmdp_simplex(env, L)
    if not res.optimal:
        raise ValidationError("no feasible policy under Psi(pi)")
    return policy_from_occupation(res.d_opt.reshape(env.dims.shape))


@dataclass(frozen=True)
class EpsNeCertificate:
    target_eps: float
    delta: float
    c_tilde: float
    c_psa: float
    n_required: int
    eps1_theory: float
    eps2_theory: float
    n_used: Optional[int] = None
    eps1_measured: float = float("nan")
    eps1_stderr: float = float("nan")
    eps2_measured: float = float("nan")
    eps2_stderr: float = float("nan")
    menu: str = ""
    n_deviations: int = 0
    exact: bool = False

    @property
    def holds(self) -> bool:
        """Measured gaps within theory plus three standard errors (vacuous if unmeasured)."""
        if math.isnan(self.eps1_measured):
            return True
        return bool(
            self.eps1_measured <= self.eps1_theory + 3 * self.eps1_stderr + 1e-12
            and self.eps2_measured <= self.eps2_theory + 3 * self.eps2_stderr + 1e-12
        )

    def to_json(self) -> dict:
        out = {}
        for key, val in self.__dict__.items():
            out[key] = None if isinstance(val, float) and not math.isfinite(val) else val
        out["holds"] = self.holds
        return out


def epsilon_ne_certificate(
    env: EnvironmentModel,
    pi_star: np.ndarray,
    target_eps: float,
    delta: float,
    config: Optional[NPlayerConfig] = None,
    n_players: Optional[int] = None,
) -> EpsNeCertificate:
    """Theoretical (eps1, eps2) and minimal N for ``target_eps``; optionally measured.

    With ``config`` the deviation menu is evaluated at ``n_players`` (default:
    the minimal N). The menu is every deterministic policy when the game has
    at most 16 (t, s, a) cells, otherwise the mean-field best response; either
    way the measured eps1 is a lower estimate of the true supremum. Deviations
    that break player 1's constraints (beyond 3 standard errors) are skipped.
    """
    if not 0 < target_eps <= delta:
        raise ValidationError("target_eps must satisfy 0 < target_eps <= delta")
    bs = bound_constants(env, delta=delta)
    n_req = bs.n_required(target_eps)
    eps1_t, eps2_t = bs.eps_ne(target_eps)
    cert = dict(
        target_eps=float(target_eps),
        delta=float(delta),
        c_tilde=bs.c_tilde,
        c_psa=bs.c_psa,
        n_required=n_req,
        eps1_theory=eps1_t,
        eps2_theory=eps2_t,
    )
    if config is None:
        return EpsNeCertificate(**cert)
    N = n_req if n_players is None else int(n_players)
    cfg = config.with_players(N)
    T1, S, A = env.dims.shape
    if T1 * S * A <= DETERMINISTIC_MENU_MAX:
        menu, menu_name = list(deterministic_policies(env)), "deterministic"
    else:
        menu, menu_name = [mean_field_best_response(env, pi_star)], "best_response"
    exact = (S * A) ** N <= EXACT_MAX_PROFILES
    if exact:
        v0, c0 = exact_player1(env, pi_star, pi_star, N)
        eps2, eps2_se = float(np.linalg.norm(np.minimum(0.0, env.gamma0 - c0))), 0.0
    else:
        samples = _simulate_samples(env, pi_star, NPlayerConfig(N, cfg.n_episodes, cfg.seed, None, cfg.chunk_size))
        base = _stats(env, samples, cfg)
        eps2 = base.g_fea_1
        eps2_se = float(np.linalg.norm(base.cost1_stderr))
    best, best_se, used = 0.0, 0.0, 0
    for pi_dev in menu:
        if exact:
            g = deviation_gain(env, pi_star, pi_dev, cfg, exact=True)
        else:
            g = _paired_gain(env, pi_star, pi_dev, cfg, samples)
        cost_se = 0.0 if exact else 3 * float(np.max(base.cost1_stderr, initial=0.0))
        if np.any(g.cost_dev > env.gamma0 + cost_se + 1e-12):
            continue
        used += 1
        if g.gain > best:
            best, best_se = g.gain, g.stderr
    return EpsNeCertificate(
        **cert,
        n_used=N,
        eps1_measured=best,
        eps1_stderr=best_se,
        eps2_measured=eps2,
        eps2_stderr=eps2_se,
        menu=menu_name,
        n_deviations=used,
        exact=exact,
    )


# ---------------------------------------------------------------------------
# Rate study


@dataclass(frozen=True)
class RateRow:
    n_players: int
    deviation_mean: float
    deviation_stderr: float
    gain_mean: float
    gain_stderr: float


@dataclass(frozen=True)
class RateStudy:
    rows: tuple
    slope: float
    intercept: float

    CSV_COLUMNS = ("n_players", "deviation_mean", "deviation_stderr", "gain_mean", "gain_stderr")


def rate_study(
    env: EnvironmentModel,
    pi_star: np.ndarray,
    Ns: Sequence[int],
    config: NPlayerConfig,
    pi_dev: Optional[np.ndarray] = None,
) -> RateStudy:
    """Empirical-flow deviation and deviation gain as N grows, with a log-log fit.

    ``pi_dev`` defaults to the mean-field best response to ``pi_star``.
    """
    Ns = [int(n) for n in Ns]
    if len(Ns) < 3 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValidationError("Ns must hold at least three strictly increasing values")
    if pi_dev is None:
        pi_dev = mean_field_best_response(env, pi_star)
    rows = []
    for n in Ns:
        cfg = config.with_players(n)
        base = _simulate_samples(env, pi_star, NPlayerConfig(n, cfg.n_episodes, cfg.seed, None, cfg.chunk_size))
        dev = _simulate_samples(env, pi_star, NPlayerConfig(n, cfg.n_episodes, cfg.seed, pi_dev, cfg.chunk_size))
        st = _stats(env, base, cfg)
        diff = dev.v1 - base.v1
        rows.append(RateRow(n, st.flow_deviation, st.flow_deviation_stderr, float(diff.mean()), float(_stderr(diff))))
    x = np.log([r.n_players for r in rows])
    y = np.log([max(r.deviation_mean, 1e-300) for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    return RateStudy(tuple(rows), float(slope), float(intercept))
