"""Occupation-measure linear programs and a dense two-phase simplex solver.

Variables are ordered ``phi[s, a]`` flattened row-major, i.e. variable
``2 * s + a``, with ``s`` the flat state index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, MaxPivots, Unbounded
from .model import ACTIVE
from .policy import Policy

FEAS_TOL = 1e-9
NORM_TOL = 1e-8
RANDOMIZED_BAND = 1e-6
PIVOT_TOL = 1e-7
REFACTOR_ROUNDS = 5
UNVISITED_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0``."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    names: tuple = ()
    # occupation-measure metadata; None for generic programs
    n_states: int | None = None
    cost: np.ndarray | None = field(default=None, repr=False)
    data_usage: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        N = c.size
        A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, N)
        A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, N)
        b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if b_ub.size != A_ub.shape[0] or b_eq.size != A_eq.shape[0]:
            raise ValueError("constraint right-hand sides do not match their matrices")
        for arr in (c, A_ub, A_eq, b_ub, b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")
        for name, arr in (("c", c), ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq)):
            object.__setattr__(self, name, arr)

    @property
    def num_vars(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    reduced_costs: np.ndarray
    pivots: int
    basis: np.ndarray
    rows: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class StationarySolution:
    """Occupation measure ``phi[s, a]`` with its average cost and data usage."""

    phi: np.ndarray
    objective_value: float
    data_usage: float
    lp_objective: float | None = None
    pivots: int | None = None
    warm_start: tuple | None = field(default=None, repr=False)

    @property
    def policy(self) -> Policy:
        return policy_from_phi(self.phi)

    @property
    def state_distribution(self) -> np.ndarray:
        return self.phi.sum(axis=1)


# ---------------------------------------------------------------------------
# solver


def _pivot(T, r, k):
    T[r] /= T[r, k]
    col = T[:, k].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _choose_entering(red, allowed, tol, rule):
    cand = np.flatnonzero((red < -tol) & allowed)
    if cand.size == 0:
        return None
    if rule == "bland":
        return int(cand[0])
    return int(cand[np.argmin(red[cand])])


def _choose_leaving(T, k, basis, tol, rule):
    col = T[:-1, k]
    rows = np.flatnonzero(col > PIVOT_TOL)
    if rows.size == 0:
        return None
    rhs = T[rows, -1]
    ratios = rhs / col[rows]
    if rule == "bland":
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        return int(ties[np.argmin(basis[ties])])
    # two-pass ratio test: bound the step with a little feasibility slack,
    # then take the largest pivot among rows within that bound
    bound = np.min((rhs + tol) / col[rows])
    ok = rows[ratios <= bound]
    return int(ok[np.argmax(col[ok])])


def _run(T, basis, allowed, tol, rule, budget):
    pivots = 0
    seen = set()
    fallback = False
    while True:
        active = rule
        if rule == "hybrid":
            active = "bland" if fallback else "dantzig"
        k = _choose_entering(T[-1, :-1], allowed, tol, active)
        if k is None:
            return pivots
        r = _choose_leaving(T, k, basis, tol, active)
        if r is None:
            raise Unbounded(f"objective unbounded along column {k}")
        before = T[-1, -1]
        _pivot(T, r, k)
        np.maximum(T[:-1, -1], 0.0, out=T[:-1, -1])
        basis[r] = k
        pivots += 1
        if pivots >= budget:
            raise MaxPivots(f"pivot limit {budget} reached")
        if rule != "hybrid":
            continue
        if abs(T[-1, -1] - before) > tol * 1e-3:
            seen.clear()
            fallback = False
        else:
            key = np.sort(basis).tobytes()
            if key in seen:
                fallback = True
            seen.add(key)


def simplex(lp: LinearProgram, tol: float = FEAS_TOL, max_pivots: int = 100_000,
            rule: str = "hybrid", warm_start: tuple | None = None) -> LPResult:
    """Two-phase dense tableau simplex.

    ``rule="bland"`` picks the lowest-index improving column and breaks ratio
    ties by lowest basic index, which rules out cycling. ``rule="dantzig"``
    picks the most negative reduced cost. ``rule="hybrid"`` prices with
    Dantzig and switches to Bland's rule as soon as a basis repeats within a
    run of degenerate pivots, going back to Dantzig after the next pivot that
    improves the objective. Pure Bland is correct but stalls for a very long
    time on the highly degenerate occupation-measure programs.

    ``warm_start=(rows, basis)`` from an earlier result on a program with the
    same constraints skips phase one when that basis is still feasible; only
    the cost vector may differ.
    """
    if rule not in ("bland", "dantzig", "hybrid"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    N = lp.num_vars
    m_ub, m_eq = lp.A_ub.shape[0], lp.A_eq.shape[0]
    m = m_ub + m_eq
    A = np.zeros((m, N + m_ub))
    A[:m_ub, :N] = lp.A_ub
    A[:m_ub, N:] = np.eye(m_ub)
    A[m_ub:, :N] = lp.A_eq
    b = np.concatenate([lp.b_ub, lp.b_eq])
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    n_cols = N + m_ub

    T = None
    pivots = 0
    if warm_start is not None:
        T, basis, keep_rows = _warm_tableau(A, b, warm_start, tol)
    if T is None:
        T, basis, keep_rows, pivots = _phase_one(A, b, m_ub, flip, tol, rule, max_pivots)

    cost = np.concatenate([lp.c, np.zeros(m_ub)])
    T[-1, :] = 0.0
    T[-1, :n_cols] = cost
    for i, j in enumerate(basis):
        T[-1] -= cost[j] * T[i]
    allowed = np.ones(n_cols, dtype=bool)
    for _ in range(REFACTOR_ROUNDS):
        pivots += _run(T, basis, allowed, tol, rule, max(max_pivots - pivots, 1))
        # rebuild the tableau from the original data and confirm optimality,
        # since long pivot sequences let the updated reduced costs drift
        fresh, _, _ = _warm_tableau(A, b, (keep_rows, basis), tol)
        if fresh is None:
            break
        fresh[-1, :n_cols] = cost - cost[basis] @ fresh[:-1, :n_cols]
        fresh[-1, -1] = -cost[basis] @ fresh[:-1, -1]
        T = fresh
        if T[-1, :-1].min() >= -tol:
            break

    # recompute the basic solution from the original data to shed pivot drift
    rows = keep_rows
    B = A[rows][:, basis]
    try:
        xb = np.linalg.solve(B, b[rows])
    except np.linalg.LinAlgError:
        xb = T[:-1, -1]
    x_full = np.zeros(n_cols)
    x_full[basis] = xb
    x_full[np.abs(x_full) < 1e-13] = 0.0
    red = T[-1, :n_cols].copy()
    x = x_full[:N]
    return LPResult(
        x=x,
        objective=float(lp.c @ x),
        reduced_costs=red,
        pivots=pivots,
        basis=basis.copy(),
        rows=rows.copy(),
    )


def _warm_tableau(A, b, warm_start, tol):
    rows, basis = warm_start
    rows = np.asarray(rows, dtype=bool)
    basis = np.array(basis, dtype=np.int64)
    if rows.size != A.shape[0] or basis.size != rows.sum() or basis.max(initial=-1) >= A.shape[1]:
        return None, None, None
    Ar, br = A[rows], b[rows]
    try:
        Binv = np.linalg.inv(Ar[:, basis])
    except np.linalg.LinAlgError:
        return None, None, None
    xb = Binv @ br
    if xb.min(initial=0.0) < -tol:
        return None, None, None
    # the dropped rows must be implied by the kept ones
    if not rows.all():
        lhs = A[~rows][:, basis] @ xb
        if np.abs(lhs - b[~rows]).max() > 1e-8:
            return None, None, None
    T = np.zeros((basis.size + 1, A.shape[1] + 1))
    T[:-1, :-1] = Binv @ Ar
    T[:-1, -1] = np.clip(xb, 0.0, None)
    return T, basis, rows


def _phase_one(A, b, m_ub, flip, tol, rule, max_pivots):
    m, n_cols = A.shape
    # slacks of un-flipped <= rows start basic; everything else gets an artificial
    basis = np.empty(m, dtype=np.int64)
    art_rows = []
    for i in range(m):
        if i < m_ub and not flip[i]:
            basis[i] = n_cols - m_ub + i
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    T = np.zeros((m + 1, n_cols + n_art + 1))
    T[:m, :n_cols] = A
    T[:m, -1] = b
    for j, i in enumerate(art_rows):
        T[i, n_cols + j] = 1.0
        basis[i] = n_cols + j
    keep = np.ones(m + 1, dtype=bool)
    pivots = 0
    if n_art:
        T[-1, n_cols:n_cols + n_art] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        allowed = np.ones(n_cols + n_art, dtype=bool)
        pivots += _run(T, basis, allowed, tol, rule, max_pivots)
        infeas = -T[-1, -1]
        if infeas > tol * max(1.0, np.abs(b).max(initial=0.0)) * 10:
            raise Infeasible(f"phase one ended with infeasibility {infeas:.3e}")
        # drive zero-level artificials out of the basis; drop redundant rows
        for i in range(m):
            if basis[i] >= n_cols:
                row = np.abs(T[i, :n_cols])
                j = int(np.argmax(row)) if n_cols else 0
                if n_cols and row[j] > PIVOT_TOL:
                    _pivot(T, i, j)
                    basis[i] = j
                    pivots += 1
                else:
                    keep[i] = False
        T = np.delete(T[keep], np.s_[n_cols:n_cols + n_art], axis=1)
        basis = basis[keep[:-1]]
    return T, basis, keep[:-1], pivots


# ---------------------------------------------------------------------------
# occupation-measure programs


def _balance_rows(kernel: np.ndarray) -> np.ndarray:
    n, n_act, _ = kernel.shape
    A = -kernel.reshape(n * n_act, n).T.copy()
    for a in range(n_act):
        A[np.arange(n), np.arange(n) * n_act + a] += 1.0
    return A


def _names(n, n_act):
    return tuple(f"phi_{s}_{a}" for s in range(n) for a in range(n_act))


def build_cmdp_lp(model) -> LinearProgram:
    """Minimise average detection error subject to the data budget."""
    K = model.kernel
    n, n_act, _ = K.shape
    A_eq = np.vstack([_balance_rows(K), np.ones((1, n * n_act))])
    b_eq = np.zeros(n + 1)
    b_eq[-1] = 1.0
    return LinearProgram(
        c=model.cost.ravel(),
        A_ub=model.data_usage.reshape(1, -1),
        b_ub=np.array([model.budget]),
        A_eq=A_eq,
        b_eq=b_eq,
        names=_names(n, n_act),
        n_states=n,
        cost=model.cost,
        data_usage=model.data_usage,
    )


def build_lagrangian_lp(model, lam: float) -> LinearProgram:
    """Unconstrained program whose stage cost is ``c + lam * d``."""
    if lam < 0:
        raise ValueError("Lagrange multiplier must be nonnegative")
    K = model.kernel
    n, n_act, _ = K.shape
    A_eq = np.vstack([_balance_rows(K), np.ones((1, n * n_act))])
    b_eq = np.zeros(n + 1)
    b_eq[-1] = 1.0
    return LinearProgram(
        c=(model.cost + lam * model.data_usage).ravel(),
        A_ub=np.zeros((0, n * n_act)),
        b_ub=np.zeros(0),
        A_eq=A_eq,
        b_eq=b_eq,
        names=_names(n, n_act),
        n_states=n,
        cost=model.cost,
        data_usage=model.data_usage,
    )


def solve_lp(lp: LinearProgram, rule: str = "hybrid", tol: float = FEAS_TOL,
             warm_start: tuple | None = None) -> StationarySolution:
    """Solve an occupation-measure program and package the measure."""
    if lp.n_states is None:
        raise ValueError("solve_lp needs a program from build_cmdp_lp or build_lagrangian_lp")
    res = simplex(lp, tol=tol, rule=rule, warm_start=warm_start)
    x = res.x.copy()
    if x.min(initial=0.0) < -10 * tol:
        raise Infeasible(f"solver returned a negative occupation {x.min():.3e}")
    x[x < 0] = 0.0
    phi = x.reshape(lp.n_states, -1)
    return StationarySolution(
        phi=phi,
        objective_value=float(np.sum(phi * lp.cost)),
        data_usage=float(np.sum(phi * lp.data_usage)),
        lp_objective=res.objective,
        pivots=res.pivots,
        warm_start=(res.rows, res.basis),
    )


def solve_cmdp(model, **kw) -> StationarySolution:
    return solve_lp(build_cmdp_lp(model), **kw)


def solve_lagrangian(model, lam: float, **kw) -> StationarySolution:
    return solve_lp(build_lagrangian_lp(model, lam), **kw)


def policy_from_phi(phi: np.ndarray, unvisited_mass: float = UNVISITED_MASS) -> Policy:
    """``pi(a|s) = phi(s,a) / sum_a' phi(s,a')``; unvisited states sleep."""
    phi = np.asarray(phi, dtype=float)
    mass = phi.sum(axis=1)
    visited = mass > unvisited_mass
    p = np.zeros(phi.shape[0])
    p[visited] = phi[visited, ACTIVE] / mass[visited]
    return Policy(np.clip(p, 0.0, 1.0))


def randomized_states(policy: Policy, band: float = RANDOMIZED_BAND) -> np.ndarray:
    p = policy.p_active
    return np.flatnonzero((p > band) & (p < 1.0 - band))


def balance_residual(kernel: np.ndarray, phi: np.ndarray) -> float:
    """Max violation of ``sum_a phi(s',a) = sum_{s,a} phi(s,a) P(s'|s,a)``."""
    inflow = np.einsum("sa,sat->t", phi, kernel)
    return float(np.abs(phi.sum(axis=1) - inflow).max())


def write_lp_file(lp: LinearProgram, path) -> None:
    """Dump in CPLEX LP text format, columns in the fixed variable order."""
    names = lp.names or tuple(f"x{j}" for j in range(lp.num_vars))

    def expr(row):
        terms = [f"{v:+.17g} {names[j]}" for j, v in enumerate(row) if v != 0.0]
        return " ".join(terms) if terms else "0 " + names[0]

    lines = ["\\ occupation-measure program", "Minimize", " obj: " + expr(lp.c), "Subject To"]
    for i, row in enumerate(lp.A_ub):
        lines.append(f" ub{i}: {expr(row)} <= {lp.b_ub[i]:.17g}")
    for i, row in enumerate(lp.A_eq):
        lines.append(f" eq{i}: {expr(row)} = {lp.b_eq[i]:.17g}")
    lines.append("Bounds")
    lines.extend(f" {nm} >= 0" for nm in names)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
