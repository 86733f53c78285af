"""Strategy execution and indirect-utility simulation.

Two engines live here.  The forward-induction engine executes simple
strategies exactly: at every rebalance it solves, node by node, for the
post-trade Pareto state that leaves each maker's expected utility
unchanged, and between rebalances the indirect utilities are the
conditional expectations of the terminal allocation under the governing
state.  The SDE engine discretizes dU = K(U, Q) dB by an Euler step
whose kernel K comes from the martingale representation of F_v at the
current saddle point.

Both engines exist in a general tree-mode (any panel, non-recombining
tree, states per node) and a fast path-mode restricted to one
exponential maker, where the field separates as F(v, x, q) =
v e^{-gamma x} Phi(q) and everything reduces to table lookups on a
recombining lattice; the fast mode carries thousands of Monte Carlo
paths on fine grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .conjugate import saddle_batch
from .field import FieldEvaluator, _pullback
from .representative import PrimalPoint, representative_utility
from .tree import ScenarioTree
from .utilities import MakerPanel

__all__ = [
    "SimpleStrategy",
    "ExecutionResult",
    "SdeResult",
    "PathBundle",
    "execute_simple",
    "simulate_sde",
    "kernel_K",
    "state_from_U",
    "utility_preservation_residual",
    "execute_simple_paths",
    "simulate_sde_paths",
    "indifference_cash",
    "no_arbitrage_gap",
    "sample_lattice_paths",
]

_EPS_EXPLODE_SCALE = 1e-10


@dataclass(frozen=True)
class SimpleStrategy:
    """Piecewise constant position: trade n fixes positions[n] at
    times[levels[n]] and holds it until the next trade (the last one
    until maturity).  Each position entry may be a scalar, a (J,)
    vector, or a per-node (n_level, J) table; node dependence keeps the
    strategy predictable because the trade at a level is a function of
    that level's node only."""

    levels: tuple
    positions: tuple

    def __post_init__(self):
        lv = tuple(int(l) for l in self.levels)
        if len(lv) != len(self.positions) or not lv:
            raise ValueError("levels and positions must align and be nonempty")
        if any(b <= a for a, b in zip(lv, lv[1:])) or lv[0] < 0:
            raise ValueError("rebalance levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    def position_at(self, n: int, tree: ScenarioTree) -> np.ndarray:
        lev = self.levels[n]
        pos = np.asarray(self.positions[n], dtype=float)
        return np.broadcast_to(
            np.atleast_2d(pos) if pos.ndim else pos,
            (tree.n_nodes(lev), tree.n_assets)).copy()


@dataclass
class Rebalance:
    level: int
    old_state: tuple
    new_state: tuple
    residual: float


@dataclass
class ExecutionResult:
    """Per-level market state along a simple-strategy execution.

    U, W, X, Q are lists of per-node arrays; level k holds the state
    governing the interval ending at times[k], so a trade at level k
    shows up from level k+1 on (U itself is continuous across trades by
    construction).  V is filled on request; V_T at the leaves is always
    available as minus the terminal cash-plus-delivery."""

    tree: ScenarioTree
    lam0: np.ndarray
    U: list
    W: list
    X: list
    Q: list
    V: list
    v_terminal: np.ndarray
    rebalances: list = dc_field(default_factory=list)

    @property
    def indifference_residual(self) -> float:
        return max(r.residual for r in self.rebalances)

    def martingale_residual(self) -> float:
        """One-step conditional-expectation gap of U over the whole run,
        including across rebalances, where indifference makes the chain
        a martingale despite the state jump."""
        worst = 0.0
        for k in range(self.tree.steps):
            pulled = _pullback(self.U[k + 1], self.tree.child_idx[k],
                               self.tree.edge_p[k])
            scale = 1.0 + np.abs(self.U[k]).max()
            worst = max(worst, float(np.abs(pulled - self.U[k]).max()) / scale)
        return worst


def execute_simple(evaluator: FieldEvaluator, strategy: SimpleStrategy,
                   lam0=None, want_interior_V: bool = False,
                   tol_scale: float = 1e-13) -> ExecutionResult:
    """Run a simple strategy by forward induction over its trades.

    Each trade solves the indifference condition: the new state keeps
    F_v at the trade node equal to its pre-trade value.  States between
    trades are pushed to later levels by ancestry, so the tree must use
    implicit indexing.
    """
    panel, tree = evaluator.panel, evaluator.tree
    if not tree.implicit:
        raise ValueError("execute_simple needs an implicit tree; "
                         "use execute_simple_paths on lattices")
    M, J, N = panel.size, tree.n_assets, tree.steps
    if strategy.levels[-1] >= N:
        raise ValueError("rebalance levels must precede maturity")
    lam0 = (np.full(M, 1.0 / M) if lam0 is None
            else np.asarray(lam0, dtype=float) / np.sum(lam0))

    U = [None] * (N + 1)
    W = [None] * (N + 1)
    X = [None] * (N + 1)
    Q = [None] * (N + 1)
    rebalances = []

    anchor = 0
    v_a = lam0[None, :].copy()
    x_a = np.zeros(1)
    q_a = np.zeros((1, J))
    sweep = evaluator.sweep_states(0, v_a, x_a, q_a, names=("dv",))

    def fill(from_level, to_level):
        for k in range(from_level, to_level + 1):
            anc = tree.ancestor_index(k, np.arange(tree.n_nodes(k)), anchor)
            U[k] = sweep.at("dv", k).copy()
            W[k] = v_a[anc]
            X[k] = x_a[anc]
            Q[k] = q_a[anc]

    fill(0, strategy.levels[0])
    for n, lev in enumerate(strategy.levels):
        anc = tree.ancestor_index(lev, np.arange(tree.n_nodes(lev)), anchor)
        old = (v_a[anc], x_a[anc], q_a[anc])
        theta = strategy.position_at(n, tree)
        u_target = sweep.at("dv", lev)
        w, x, resid, _ = saddle_batch(evaluator, lev, u_target, theta,
                                      w0=old[0], x0=old[1],
                                      tol_scale=tol_scale)
        rebalances.append(Rebalance(level=lev, old_state=old,
                                    new_state=(w, x, theta),
                                    residual=float(resid.max())))
        anchor, v_a, x_a, q_a = lev, w, x, theta
        sweep = evaluator.sweep_states(lev, v_a, x_a, q_a, names=("dv",))
        nxt = (strategy.levels[n + 1] if n + 1 < len(strategy.levels) else N)
        fill(lev + 1, nxt)

    anc_leaf = tree.leaf_owner(anchor)
    v_term = -(x_a[anc_leaf] + (q_a[anc_leaf] * tree.psi).sum(axis=1))
    V = [None] * (N + 1)
    if want_interior_V:
        for k in range(N + 1):
            w0 = W[k] if k else lam0[None, :]
            wv, xv, _, _ = saddle_batch(evaluator, k, U[k],
                                        np.zeros((tree.n_nodes(k), J)),
                                        w0=w0, x0=np.zeros(tree.n_nodes(k)))
            V[k] = -xv
    return ExecutionResult(tree=tree, lam0=lam0, U=U, W=W, X=X, Q=Q, V=V,
                           v_terminal=v_term, rebalances=rebalances)


@dataclass
class SdeResult:
    """Euler-discretized indirect utility and recovered market state."""

    tree: ScenarioTree
    U: list
    W: list
    X: list
    V: list
    Q: list
    exploded: list
    eps_explode: float

    @property
    def any_exploded(self) -> bool:
        return any(e.any() for e in self.exploded)

    def martingale_residual(self) -> float:
        worst = 0.0
        for k in range(self.tree.steps):
            # skip nodes that exploded and nodes whose children were
            # clamped; the freeze deliberately breaks the one-step mean
            child_hit = self.exploded[k + 1][self.tree.child_idx[k]].any(axis=1)
            ok = ~self.exploded[k] & ~child_hit
            if not ok.any():
                continue
            pulled = _pullback(self.U[k + 1], self.tree.child_idx[k],
                               self.tree.edge_p[k])
            scale = 1.0 + np.abs(self.U[k][ok]).max()
            worst = max(worst, float(
                np.abs(pulled[ok] - self.U[k][ok]).max()) / scale)
        return worst


def kernel_K(evaluator: FieldEvaluator, u, q, node):
    """SDE kernel K(u, q) at a node: dHdv of the integrand at the saddle.

    Returns an (M, d) array mapping Brownian increments to indirect
    utility increments.
    """
    level, idx = node
    tree = evaluator.tree
    n = tree.n_nodes(level)
    u = np.broadcast_to(np.asarray(u, float), (n, evaluator.panel.size))
    q = np.broadcast_to(np.atleast_1d(np.asarray(q, float)),
                        (n, tree.n_assets))
    w, x, _, _ = saddle_batch(evaluator, level, u, q)
    sweep = evaluator.sweep_states(level, w, x, q, names=("dv",))
    _, dHdv, _ = _node_integrand(evaluator, sweep, level)
    return dHdv[idx]


def _node_integrand(evaluator, sweep, level):
    tree = evaluator.tree
    dt = tree.dt(level)
    ci = tree.child_idx[level]
    p = tree.edge_p[level]
    db = tree.edge_db[level]
    dFv = sweep.at("dv", level + 1)[ci] - sweep.at("dv", level)[:, None, :]
    dHdv = np.einsum("ne,nem,nei->nmi", p, dFv, db) / dt
    resid = np.abs(dFv - np.einsum("nmi,nei->nem", dHdv, db)).max()
    return None, dHdv, float(resid)


def simulate_sde(evaluator: FieldEvaluator, q_levels, u0,
                 want_states: bool = True,
                 eps_scale: float = _EPS_EXPLODE_SCALE) -> SdeResult:
    """Euler scheme for dU = K(U, Q) dB on the full tree.

    ``q_levels`` gives the position held over each step, per node of the
    step's starting level (broadcast from scalars or vectors).  Nodes
    whose U leaves the negative orthant by less than eps are flagged as
    exploded and frozen; their descendants inherit the flag.
    """
    panel, tree = evaluator.panel, evaluator.tree
    if not tree.implicit:
        raise ValueError("simulate_sde needs an implicit tree; "
                         "use simulate_sde_paths on lattices")
    M, J, N = panel.size, tree.n_assets, tree.steps
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if np.any(u0 >= 0):
        raise ValueError("initial indirect utilities must be negative")
    eps = eps_scale * np.abs(u0).max()

    U = [u0[None, :].copy()]
    exploded = [np.zeros(1, dtype=bool)]
    W = [None] * (N + 1)
    X = [None] * (N + 1)
    V = [None] * (N + 1)
    Q = []
    w_prev = None
    x_prev = None
    for k in range(N):
        n = tree.n_nodes(k)
        q = np.broadcast_to(np.atleast_2d(np.asarray(q_levels[k], float)),
                            (n, J)).copy()
        Q.append(q)
        ok = ~exploded[k]
        u_solve = np.where(ok[:, None], U[k], -1.0)
        w, x, _, _ = saddle_batch(evaluator, k, u_solve, q,
                                  w0=w_prev, x0=x_prev)
        sweep = evaluator.sweep_states(k, w, x, q, names=("dv",))
        _, dHdv, _ = _node_integrand(evaluator, sweep, k)
        if want_states:
            W[k] = np.where(ok[:, None], w, np.nan)
            X[k] = np.where(ok, x, np.nan)
        nc = tree.branching(k)
        u_next = (U[k][:, None, :]
                  + np.einsum("nmi,nei->nem", dHdv, tree.edge_db[k]))
        u_next = np.where(ok[:, None, None], u_next, U[k][:, None, :])
        u_next = u_next.reshape(n * nc, M)
        flag = np.repeat(~ok, nc) | (u_next.max(axis=1) >= -eps)
        u_next[flag] = np.minimum(u_next[flag], -eps)
        U.append(u_next)
        exploded.append(flag)
        w_prev = np.repeat(w, nc, axis=0)
        x_prev = np.repeat(x, nc)
    if want_states:
        q_term = Q[-1][tree.ancestor_index(N, np.arange(tree.n_nodes(N)),
                                           N - 1)]
        ok = ~exploded[N]
        u_solve = np.where(ok[:, None], U[N], -1.0)
        w, x, _, _ = saddle_batch(evaluator, N, u_solve, q_term,
                                  w0=w_prev, x0=x_prev)
        W[N] = np.where(ok[:, None], w, np.nan)
        X[N] = np.where(ok, x, np.nan)
        for k in range(N + 1):
            ok = ~exploded[k]
            u_solve = np.where(ok[:, None], U[k], -1.0)
            wv, xv, _, _ = saddle_batch(
                evaluator, k, u_solve, np.zeros((tree.n_nodes(k), J)),
                w0=W[k] if ok.all() else None)
            V[k] = np.where(ok, -xv, np.nan)
    return SdeResult(tree=tree, U=U, W=W, X=X, V=V, Q=Q,
                     exploded=exploded, eps_explode=eps)


def utility_preservation_residual(result: ExecutionResult) -> float:
    """Worst indifference violation over all rebalance nodes.

    Each rebalance solves for the post-trade state keeping every maker's
    conditional expected utility fixed; the recorded residual is the
    final sup-norm gap of that system, re-evaluated after convergence.
    """
    return result.indifference_residual


def state_from_U(evaluator: FieldEvaluator, u, q, node):
    """Recover (W, X, V) from indirect utilities and position at a node.

    W are the normalized saddle weights of G(u, 1, q), X the saddle
    cash, and V minus the saddle cash of G(u, 1, 0).
    """
    level, idx = node
    tree = evaluator.tree
    n = tree.n_nodes(level)
    u = np.broadcast_to(np.asarray(u, float), (n, evaluator.panel.size))
    q = np.broadcast_to(np.atleast_1d(np.asarray(q, float)),
                        (n, tree.n_assets))
    w, x, _, _ = saddle_batch(evaluator, level, u, q)
    _, x0, _, _ = saddle_batch(evaluator, level, u,
                               np.zeros((n, tree.n_assets)), w0=w, x0=x)
    return w[idx], float(x[idx]), float(-x0[idx])


def no_arbitrage_gap(evaluator: FieldEvaluator, lam0, v_terminal) -> float:
    """E[r(lam0, Sigma0 - V_T)] - E[r(lam0, Sigma0)], nonnegative for any
    strategy and zero exactly for the zero strategy."""
    tree, panel = evaluator.tree, evaluator.panel
    lam0 = np.asarray(lam0, dtype=float) / np.sum(lam0)
    prob = tree.leaf_probabilities()
    r0, _, _ = representative_utility(panel, lam0, tree.sigma0)
    r1, _, _ = representative_utility(panel, lam0,
                                      tree.sigma0 - np.asarray(v_terminal))
    return float(prob @ r1 - prob @ r0)


# -- fast lattice engines (one exponential maker) ------------------------


def _check_fast(panel: MakerPanel, tree: ScenarioTree):
    if panel.size != 1 or not panel.all_exponential:
        raise ValueError("path-mode engines need a single exponential maker")
    if tree.dim != 1 or tree.n_assets != 1:
        raise ValueError("path-mode engines need one asset on a 1d lattice")


def _phi_tables(panel, tree, qs):
    """Per-level tables of Phi(q) = dF/dv(1, 0, q) for each position q.

    With one exponential maker the field separates as F(v, x, q) =
    v exp(-gamma x) Phi(q), so these tables carry all the information
    the path engines need.
    """
    ev = FieldEvaluator(panel, tree, cache=False)
    tables = {}
    for q in qs:
        key = round(float(q), 12)
        if key in tables:
            continue
        sweep = ev.sweep_point(PrimalPoint(v=[1.0], x=0.0, q=[float(q)]),
                               names=("dv",))
        tables[key] = [sweep.at("dv", k)[:, 0] for k in range(tree.steps + 1)]
    return tables


def sample_lattice_paths(tree: ScenarioTree, n_paths: int, seed=None,
                         signs=None):
    """Sample up/down paths on a recombining lattice.

    Returns (j, db): node positions (n_paths, N+1) and Brownian
    increments (n_paths, N).  Pass ``signs`` (n_paths, N) of +-1 to
    reuse one draw across engines or grids.
    """
    N = tree.steps
    step = np.sqrt(tree.dt(0))
    if signs is None:
        rng = np.random.default_rng(seed)
        signs = np.where(rng.random((n_paths, N)) < 0.5, 1.0, -1.0)
    signs = np.asarray(signs, dtype=float)
    j = np.zeros((n_paths, N + 1), dtype=int)
    j[:, 1:] = np.cumsum(signs > 0, axis=1)
    return j, signs * step


@dataclass
class PathBundle:
    """Monte Carlo paths of the market state on a lattice."""

    times: np.ndarray
    j: np.ndarray
    db: np.ndarray
    U: np.ndarray
    X: np.ndarray
    V: np.ndarray
    exploded: np.ndarray
    eps_explode: float = 0.0


def simulate_sde_paths(panel: MakerPanel, tree: ScenarioTree, q_levels,
                       u0: float, n_paths: int, seed=None, signs=None,
                       eps_scale: float = _EPS_EXPLODE_SCALE) -> PathBundle:
    """Euler scheme for dU = K(U, Q) dB along sampled lattice paths.

    For one exponential maker the kernel is linear in u with a per-node
    coefficient read from the Phi tables, so all paths advance in one
    vectorized update per step.
    """
    _check_fast(panel, tree)
    gamma = float(panel.gammas[0])
    N = tree.steps
    q_levels = np.broadcast_to(np.asarray(q_levels, dtype=float), (N,))
    u0 = float(u0)
    if u0 >= 0:
        raise ValueError("initial indirect utility must be negative")
    eps = eps_scale * abs(u0)
    tables = _phi_tables(panel, tree, list(q_levels) + [0.0])
    j, db = sample_lattice_paths(tree, n_paths, seed, signs)
    sqdt = np.sqrt(tree.dt(0))

    U = np.empty((n_paths, N + 1))
    U[:, 0] = u0
    exploded = np.zeros(n_paths, dtype=bool)
    for k in range(N):
        phi = tables[round(float(q_levels[k]), 12)]
        jk = j[:, k]
        coeff = (phi[k + 1][jk + 1] - phi[k + 1][jk]) / (2.0 * sqdt * phi[k][jk])
        u_next = U[:, k] * (1.0 + coeff * db[:, k])
        u_next = np.where(exploded, U[:, k], u_next)
        newly = ~exploded & (u_next >= -eps)
        exploded |= newly
        U[:, k + 1] = np.minimum(u_next, -eps)
    X = np.empty_like(U)
    V = np.empty_like(U)
    phi0 = tables[0.0]
    for k in range(N + 1):
        q_gov = q_levels[max(k - 1, 0)]
        phi = tables[round(float(q_gov), 12)]
        X[:, k] = np.log(phi[k][j[:, k]] / U[:, k]) / gamma
        V[:, k] = -np.log(phi0[k][j[:, k]] / U[:, k]) / gamma
    return PathBundle(times=tree.times.copy(), j=j, db=db, U=U, X=X, V=V,
                      exploded=exploded, eps_explode=eps)


def execute_simple_paths(panel: MakerPanel, tree: ScenarioTree, levels,
                         thetas, n_paths: int, seed=None,
                         signs=None) -> PathBundle:
    """Exact simple-strategy execution along sampled lattice paths.

    With one exponential maker the indifference condition at each trade
    is an explicit cash adjustment through the Phi tables, so the
    path-dependent state never needs the lattice to be non-recombining.
    """
    _check_fast(panel, tree)
    gamma = float(panel.gammas[0])
    N = tree.steps
    levels = [int(l) for l in levels]
    thetas = [float(t) for t in thetas]
    if len(levels) != len(thetas) or not levels:
        raise ValueError("levels and thetas must align and be nonempty")
    if any(b <= a for a, b in zip(levels, levels[1:])) or levels[-1] >= N:
        raise ValueError("trade levels must increase and precede maturity")
    tables = _phi_tables(panel, tree, thetas + [0.0])
    phi0 = tables[0.0]
    j, db = sample_lattice_paths(tree, n_paths, seed, signs)

    xi = np.zeros(n_paths)
    theta_prev = 0.0
    X = np.zeros((n_paths, N + 1))
    U = np.empty((n_paths, N + 1))
    V = np.empty((n_paths, N + 1))
    trade = dict(zip(levels, thetas))
    for k in range(N + 1):
        phi_gov = tables[round(theta_prev, 12)]
        X[:, k] = xi
        U[:, k] = np.exp(-gamma * xi) * phi_gov[k][j[:, k]]
        V[:, k] = -np.log(phi0[k][j[:, k]] / U[:, k]) / gamma
        if k in trade:
            theta = trade[k]
            phi_new = tables[round(theta, 12)]
            xi = xi + (np.log(-phi_new[k][j[:, k]])
                       - np.log(-phi_gov[k][j[:, k]])) / gamma
            theta_prev = theta
    return PathBundle(times=tree.times.copy(), j=j, db=db, U=U, X=X, V=V,
                      exploded=np.zeros(n_paths, dtype=bool))


def indifference_cash(panel: MakerPanel, tree: ScenarioTree, q: float) -> float:
    """Cash the investor receives for selling q shares at time zero.

    The single trade moves the maker from position 0 to q at unchanged
    expected utility; positive convexity in q reflects the price impact.
    """
    _check_fast(panel, tree)
    gamma = float(panel.gammas[0])
    tables = _phi_tables(panel, tree, [float(q), 0.0])
    phi_q = tables[round(float(q), 12)][0][0]
    phi_0 = tables[0.0][0][0]
    return float(np.log(-phi_q) - np.log(-phi_0)) / gamma
