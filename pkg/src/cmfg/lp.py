"""Occupation-measure LP of the constrained MDP at a fixed flow.

Three routes to the same problem:

* :func:`assemble` builds the dense equality/inequality data,
* :func:`solve_dual_backward` solves the Lagrangian relaxation for a fixed
  multiplier by backward induction and maps the value functions onto the
  LP dual variables ``(y, z)``,
* :func:`solve_cmdp_simplex` solves the constrained LP exactly with a dense
  two-phase simplex using Bland's rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EnvironmentModel, ValidationError


@dataclass(frozen=True)
class ToleranceConfig:
    simplex: float = 1e-8
    assembly: float = 1e-9
    pivot: float = 1e-11
    phase1: float = 1e-9


DEFAULT_TOL = ToleranceConfig()


@dataclass(frozen=True)
class LpData:
    A: np.ndarray  # (S*T1, S*A*T1)
    b: np.ndarray  # (S*T1,)
    r: np.ndarray  # (S*A*T1,)
    C: np.ndarray  # (k, S*A*T1)


@dataclass(frozen=True)
class DualSolution:
    y: np.ndarray
    z: np.ndarray
    value: float
    V: np.ndarray  # (T1, S) value functions under the adjusted reward
    Q: np.ndarray  # (T1, S, A)
    greedy: np.ndarray  # (T1, S) argmax action, lowest index on ties
    adjusted_reward: np.ndarray  # (T1, S, A)


@dataclass
class SimplexResult:
    status: str  # "optimal" | "infeasible"
    d_opt: Optional[np.ndarray] = None
    objective: float = float("nan")
    lambda_opt: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    basis: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def marginal_operator(n_states: int, n_actions: int) -> np.ndarray:
    """Z with (Z d_t)(i) = sum_a d_t(i, a) in the (s, a) flattening."""
    return np.kron(np.eye(n_states), np.ones((1, n_actions)))


def assemble(env: EnvironmentModel, L: np.ndarray) -> LpData:
    d = env.dims
    S, SA, T1 = d.n_states, d.n_sa, d.horizon_len
    Z = marginal_operator(S, d.n_actions)
    P = env.transitions(L)
    A = np.zeros((d.n_rows, d.n_vars))
    for t in range(T1 - 1):
        rows = slice(t * S, (t + 1) * S)
        A[rows, t * SA : (t + 1) * SA] = P[t].reshape(SA, S).T
        A[rows, (t + 1) * SA : (t + 2) * SA] = -Z
    A[(T1 - 1) * S :, :SA] = Z
    b = np.zeros(d.n_rows)
    b[(T1 - 1) * S :] = env.mu0
    r = env.rewards(L).ravel()
    C = env.costs(L).reshape(d.n_constraints, d.n_vars)
    return LpData(A=A, b=b, r=r, C=C)


def backward_induction(P: np.ndarray, reward: np.ndarray):
    """Finite-horizon optimal values; ties go to the lowest action index."""
    T1, S, A = reward.shape
    V = np.zeros((T1, S))
    Q = np.zeros((T1, S, A))
    Q[T1 - 1] = reward[T1 - 1]
    for t in range(T1 - 1, -1, -1):
        if t < T1 - 1:
            Q[t] = reward[t] + P[t] @ V[t + 1]
        V[t] = Q[t].max(axis=1)
    greedy = Q.argmax(axis=2)
    return V, Q, greedy


def values_to_dual(V: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map value functions onto LP duals.

    y-block t holds V_{t+1} for t < T and the last block holds -V_0; then
    z = V_t(s) - Q_t(s, a) >= 0 reproduces -r~ = A^T y + z.
    """
    y = np.concatenate([V[1:].ravel(), -V[0]])
    z = (V[:, :, None] - Q).reshape(-1)
    return y, z


def solve_dual_backward(env: EnvironmentModel, L: np.ndarray, lam=None) -> DualSolution:
    """Dual variables of the Lagrangian-relaxed LP with reward r - C^T lambda."""
    k = env.dims.n_constraints
    lam = np.zeros(k) if lam is None else np.asarray(lam, dtype=float)
    if lam.shape != (k,):
        raise ValidationError(f"lambda must have shape ({k},)")
    if np.any(lam < 0):
        raise ValidationError("lambda must be nonnegative")
    P = env.transitions(L)
    adj = env.rewards(L)
    if k:
        adj = adj - np.einsum("k,ktsa->tsa", lam, env.costs(L))
    V, Q, greedy = backward_induction(P, adj)
    y, z = values_to_dual(V, Q)
    return DualSolution(
        y=y, z=z, value=float(env.mu0 @ V[0]), V=V, Q=Q, greedy=greedy, adjusted_reward=adj
    )


# ---------------------------------------------------------------------------
# Dense two-phase simplex


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _run_simplex(T: np.ndarray, basis: list[int], n_cols: int, tol: ToleranceConfig, max_iter: int) -> str:
    """Minimize with the last row holding reduced costs (objective row = c - c_B B^-1 A)."""
    m = T.shape[0] - 1
    for _ in range(max_iter):
        cost_row = T[-1, :n_cols]
        entering = np.flatnonzero(cost_row < -tol.pivot)
        if entering.size == 0:
            return "optimal"
        col = int(entering[0])  # Bland: lowest index
        column = T[:m, col]
        pos = column > tol.pivot
        if not np.any(pos):
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol.pivot * max(1.0, abs(best)))
        row = int(min(ties, key=lambda i: basis[i]))  # Bland: lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    raise RuntimeError("simplex iteration limit reached")


def linprog_simplex(
    c: np.ndarray,
    A_eq: np.ndarray,
    b_eq: np.ndarray,
    A_ub: Optional[np.ndarray] = None,
    b_ub: Optional[np.ndarray] = None,
    tol: ToleranceConfig = DEFAULT_TOL,
):
    """min c^T x s.t. A_eq x = b_eq, A_ub x <= b_ub, x >= 0.

    Returns ``(status, x, objective, u_eq, u_ub, basis)`` where the duals
    satisfy ``A_eq^T u_eq + A_ub^T u_ub <= c`` with ``u_ub <= 0``.
    """
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else A_ub
    b_ub = np.zeros(0) if b_ub is None else b_ub
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub
    n_std = n + m_ub
    M = np.zeros((m, n_std))
    M[:m_eq, :n] = A_eq
    M[m_eq:, :n] = A_ub
    M[m_eq:, n:] = np.eye(m_ub)
    h = np.concatenate([b_eq, b_ub]).astype(float)
    c_std = np.concatenate([c, np.zeros(m_ub)])
    sign = np.where(h < 0, -1.0, 1.0)
    Ms = M * sign[:, None]
    hs = h * sign

    # Phase 1 tableau with one artificial per row.
    T = np.zeros((m + 1, n_std + m + 1))
    T[:m, :n_std] = Ms
    T[:m, n_std : n_std + m] = np.eye(m)
    T[:m, -1] = hs
    T[-1, :n_std] = -Ms.sum(axis=0)
    T[-1, -1] = -hs.sum()
    basis = list(range(n_std, n_std + m))
    max_iter = 50 * (n_std + m) + 1000
    status = _run_simplex(T, basis, n_std + m, tol, max_iter)
    assert status == "optimal", "phase 1 cannot be unbounded"
    if -T[-1, -1] > tol.phase1:
        return "infeasible", None, float("nan"), None, None, basis

    # Drive artificials out of the basis; rows that cannot be pivoted are redundant.
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n_std:
            cand = np.flatnonzero(np.abs(T[i, :n_std]) > 1e-9)
            if cand.size:
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
            else:
                keep[i] = False
    rows = np.flatnonzero(keep)
    T2 = np.zeros((rows.size + 1, n_std + 1))
    T2[:-1, :n_std] = T[rows, :n_std]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[i] for i in rows]
    cB = c_std[basis2]
    T2[-1, :n_std] = c_std - cB @ T2[:-1, :n_std]
    T2[-1, -1] = -cB @ T2[:-1, -1]
    status = _run_simplex(T2, basis2, n_std, tol, max_iter)
    assert status != "unbounded", "LP over a bounded polytope cannot be unbounded"

    x = np.zeros(n_std)
    x[basis2] = T2[:-1, -1]
    B = Ms[rows][:, basis2]
    u_kept = np.linalg.solve(B.T, c_std[basis2])
    u = np.zeros(m)
    u[rows] = u_kept * sign[rows]
    return "optimal", x[:n], float(c @ x[:n]), u[:m_eq], u[m_eq:], basis2


def solve_cmdp_simplex(
    env: EnvironmentModel, L: np.ndarray, gamma0=None, tol: ToleranceConfig = DEFAULT_TOL
) -> SimplexResult:
    """Exact optimum of the constrained MDP at flow ``L``.

    ``objective`` is the optimal expected cumulative reward ``r^T d``.
    """
    lp = assemble(env, L)
    gamma = env.gamma0 if gamma0 is None else np.asarray(gamma0, dtype=float)
    status, d, obj, u_eq, u_ub, basis = linprog_simplex(-lp.r, lp.A, lp.b, lp.C, gamma, tol)
    if status != "optimal":
        return SimplexResult(status=status, basis=basis)
    lam = np.maximum(-u_ub, 0.0)
    y = u_eq
    z = -lp.r + lp.C.T @ lam - lp.A.T @ y
    return SimplexResult(
        status="optimal",
        d_opt=np.maximum(d, 0.0),
        objective=-obj,
        lambda_opt=lam,
        y=y,
        z=z,
        basis=basis,
    )


@dataclass(frozen=True)
class ConstraintFeasibility:
    index: int
    min_cost: float
    margin: float
    satisfied: bool
    message: str = ""


@dataclass(frozen=True)
class FeasibilityReport:
    delta: float
    constraints: tuple[ConstraintFeasibility, ...]

    @property
    def satisfied(self) -> bool:
        return all(c.satisfied for c in self.constraints)

    @property
    def max_delta(self) -> float:
        """Largest delta for which strict feasibility holds at this flow."""
        if not self.constraints:
            return float("inf")
        return min(c.margin for c in self.constraints)


def check_strict_feasibility(
    env: EnvironmentModel, L: np.ndarray, delta: float = 0.0, gamma0=None, tol: ToleranceConfig = DEFAULT_TOL
) -> FeasibilityReport:
    """For each constraint, minimize its cumulative cost subject to the others."""
    if delta < 0:
        raise ValidationError("delta must be >= 0")
    lp = assemble(env, L)
    gamma = env.gamma0 if gamma0 is None else np.asarray(gamma0, dtype=float)
    out = []
    for i in range(env.dims.n_constraints):
        others = [j for j in range(env.dims.n_constraints) if j != i]
        status, _, obj, *_ = linprog_simplex(lp.C[i], lp.A, lp.b, lp.C[others], gamma[others], tol)
        if status != "optimal":
            out.append(
                ConstraintFeasibility(i, float("nan"), float("-inf"), False, f"assumption violated at constraint {i}")
            )
            continue
        margin = float(gamma[i] - obj)
        ok = margin >= delta - tol.simplex
        out.append(ConstraintFeasibility(i, float(obj), margin, ok, "" if ok else f"assumption violated at constraint {i}"))
    return FeasibilityReport(delta=float(delta), constraints=tuple(out))


def write_lp_dump(lp: LpData, path) -> None:
    """Plain-text coordinate dump of the LP matrices (one 'name i j value' per line)."""
    with open(path, "w") as fh:
        for name, mat in (("A", lp.A), ("C", lp.C)):
            fh.write(f"%% {name} {mat.shape[0]} {mat.shape[1]}\n")
            for i, j in zip(*np.nonzero(mat)):
                fh.write(f"{name} {i + 1} {j + 1} {mat[i, j]!r}\n")
        for name, vec in (("b", lp.b), ("r", lp.r)):
            fh.write(f"%% {name} {vec.size}\n")
            for i, v in enumerate(vec):
                fh.write(f"{name} {i + 1} {v!r}\n")
