"""Finite-state Brownian scenario trees.

A tree discretizes a d-dimensional Brownian motion on a time grid: every
node at level k carries a value of B at time t_k, and the edges to its
children carry increments and probabilities that match the Brownian
moments exactly (zero mean, covariance dt * I per step).

Two topologies are built here.  The non-recombining product-binomial
tree has 2^d children per node with implicit indexing (children of node
i are i*2^d + e), so states may be assigned per node and pushed to the
leaves by integer shifts; it is the workhorse for field sweeps with
node-dependent states.  The recombining binomial lattice (d = 1, level k
has k+1 nodes) keeps the node count linear in the step count and serves
the fine-grid convergence and Monte Carlo runs, where states depend on
the node only through (level, B).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .payoff import PayoffExpression

__all__ = ["ScenarioTree", "binomial_tree", "binomial_lattice"]


def _as_payoff(spec, b_terminal):
    """Per-leaf values from an expression string, callable, scalar or array."""
    n = b_terminal.shape[0]
    if isinstance(spec, str):
        return PayoffExpression(spec)(b_terminal)
    if callable(spec):
        return np.broadcast_to(np.asarray(spec(b_terminal), dtype=float), (n,)).copy()
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"payoff table has shape {arr.shape}, expected ({n},)")
    return arr.copy()


@dataclass
class ScenarioTree:
    """Level-array representation of a scenario tree.

    Attributes
    ----------
    times : (N+1,) grid 0 = t_0 < ... < t_N = T.
    B : list of N+1 arrays (n_k, d), Brownian value at each node.
    child_idx : list of N int arrays (n_k, nc), children in level k+1.
    edge_db : list of N arrays (n_k, nc, d), Brownian increments.
    edge_p : list of N arrays (n_k, nc), transition probabilities.
    sigma0 : (n_N,) random endowment at the leaves.
    psi : (n_N, J) traded payoffs at the leaves.
    implicit : True when child_idx follows i -> i*nc + e, which allows
        pushing per-node states to the leaves by index arithmetic.
    """

    times: np.ndarray
    B: list
    child_idx: list
    edge_db: list
    edge_p: list
    sigma0: np.ndarray
    psi: np.ndarray
    implicit: bool = False
    dim: int = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.dim = self.B[0].shape[1]
        self.sigma0 = np.asarray(self.sigma0, dtype=float)
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if self.psi.shape[0] != self.n_leaves:
            self.psi = self.psi.T
        if self.sigma0.shape != (self.n_leaves,):
            raise ValueError("sigma0 must have one value per leaf")

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_assets(self) -> int:
        return self.psi.shape[1]

    @property
    def n_leaves(self) -> int:
        return self.B[-1].shape[0]

    def n_nodes(self, level: int) -> int:
        return self.B[level].shape[0]

    @property
    def total_nodes(self) -> int:
        return sum(b.shape[0] for b in self.B)

    def dt(self, level: int) -> float:
        return float(self.times[level + 1] - self.times[level])

    def branching(self, level: int) -> int:
        return self.child_idx[level].shape[1]

    def ancestor_index(self, level_from: int, idx, level_to: int):
        """Map node indices at ``level_from`` to ancestors at ``level_to``.

        Only valid on implicit trees, where every level has a constant
        branching factor and children are blocks of consecutive indices.
        """
        if not self.implicit:
            raise ValueError("ancestor indexing requires an implicit tree")
        idx = np.asarray(idx)
        for k in range(level_from - 1, level_to - 1, -1):
            idx = idx // self.branching(k)
        return idx

    def node_probabilities(self, level: int) -> np.ndarray:
        """Unconditional probabilities of the nodes at one level."""
        prob = np.ones(1)
        for k in range(level):
            nxt = np.zeros(self.n_nodes(k + 1))
            np.add.at(nxt, self.child_idx[k].ravel(),
                      (prob[:, None] * self.edge_p[k]).ravel())
            prob = nxt
        return prob

    def leaf_probabilities(self) -> np.ndarray:
        return self.node_probabilities(self.steps)

    def leaf_owner(self, level: int) -> np.ndarray:
        """Ancestor at ``level`` of every leaf (implicit trees only)."""
        return self.ancestor_index(self.steps, np.arange(self.n_leaves), level)

    def moment_errors(self):
        """Worst deviations of (prob sum, edge mean, edge covariance).

        Exact trees return values at rounding level; the martingale
        identities of the whole library rest on these being zero.
        """
        err_p = err_mean = err_cov = 0.0
        for k in range(self.steps):
            p = self.edge_p[k]
            db = self.edge_db[k]
            dt = self.dt(k)
            err_p = max(err_p, float(np.abs(p.sum(axis=1) - 1.0).max()))
            mean = (p[..., None] * db).sum(axis=1)
            err_mean = max(err_mean, float(np.abs(mean).max()))
            cov = np.einsum("ne,nei,nej->nij", p, db, db)
            target = dt * np.eye(self.dim)
            err_cov = max(err_cov, float(np.abs(cov - target).max()))
        return err_p, err_mean, err_cov

    def consistency_error(self) -> float:
        """Worst gap between child B values and parent B plus increment."""
        dev = 0.0
        for k in range(self.steps):
            child_b = self.B[k + 1][self.child_idx[k]]
            dev = max(dev, float(np.abs(
                child_b - (self.B[k][:, None, :] + self.edge_db[k])).max()))
        return dev

    def validate(self, tol: float = 1e-12) -> None:
        err_p, err_mean, err_cov = self.moment_errors()
        if max(err_p, err_mean, err_cov) > tol:
            raise ValueError(
                f"tree moments off: prob {err_p:.2e}, mean {err_mean:.2e}, "
                f"cov {err_cov:.2e}"
            )
        if self.consistency_error() > tol:
            raise ValueError("edge increments inconsistent with node B values")

    def node_rows(self):
        """Yield per-node dump rows.

        Columns: node_id, parent_id, time, prob (of the edge from the
        representative parent; 1 at the root), incoming dB components,
        then sigma0 and psi columns at the leaves (empty elsewhere).
        Node ids number levels consecutively; on recombining lattices the
        representative parent is the one reaching the node with an up
        move where both exist.
        """
        offsets = np.cumsum([0] + [self.n_nodes(k) for k in range(self.steps)])
        d = self.dim
        parent_of = [None] * (self.steps + 1)
        in_p = [None] * (self.steps + 1)
        in_db = [None] * (self.steps + 1)
        for k in range(self.steps):
            n_next = self.n_nodes(k + 1)
            parent = np.full(n_next, -1, dtype=int)
            pe = np.zeros(n_next)
            dbe = np.zeros((n_next, d))
            for i in range(self.n_nodes(k)):
                for e in range(self.branching(k)):
                    c = self.child_idx[k][i, e]
                    parent[c] = i
                    pe[c] = self.edge_p[k][i, e]
                    dbe[c] = self.edge_db[k][i, e]
            parent_of[k + 1], in_p[k + 1], in_db[k + 1] = parent, pe, dbe
        for k in range(self.steps + 1):
            for i in range(self.n_nodes(k)):
                node_id = int(offsets[k] + i) if k < self.steps else int(
                    offsets[-1] + i)
                if k == 0:
                    parent_id, prob, db = -1, 1.0, np.zeros(d)
                else:
                    parent_id = int(offsets[k - 1] + parent_of[k][i])
                    prob, db = float(in_p[k][i]), in_db[k][i]
                if k == self.steps:
                    tail = [float(self.sigma0[i])] + [float(x) for x in self.psi[i]]
                else:
                    tail = [""] * (1 + self.n_assets)
                yield ([node_id, parent_id, float(self.times[k]), prob]
                       + [float(x) for x in db] + tail)


def binomial_tree(steps: int, horizon: float, dim: int = 1,
                  sigma0=0.0, psi=("B",)) -> ScenarioTree:
    """Non-recombining product-binomial tree with 2^dim children per node.

    Child e of node i has index i*2^dim + e; bit j of e picks the sign of
    the j-th Brownian component's move of size sqrt(dt).  ``sigma0`` and
    each entry of ``psi`` may be an expression string over B1..Bd, a
    callable on terminal B, a scalar, or a per-leaf table.
    """
    if steps < 1 or dim < 1:
        raise ValueError("steps and dim must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    nc = 1 << dim
    if nc ** steps > 1 << 22:
        raise ValueError("tree too large; use binomial_lattice for fine grids")
    dt = horizon / steps
    step = np.sqrt(dt)
    signs = np.array([[1.0 if (e >> j) & 1 == 0 else -1.0 for j in range(dim)]
                      for e in range(nc)])
    times = np.linspace(0.0, horizon, steps + 1)
    B, child_idx, edge_db, edge_p = [np.zeros((1, dim))], [], [], []
    for k in range(steps):
        n = nc ** k
        child_idx.append(np.arange(n * nc).reshape(n, nc))
        edge_db.append(np.broadcast_to(step * signs, (n, nc, dim)).copy())
        edge_p.append(np.full((n, nc), 1.0 / nc))
        B.append(np.repeat(B[-1], nc, axis=0) + np.tile(step * signs, (n, 1)))
    leaves = B[-1]
    if isinstance(psi, (str, int, float)) or callable(psi):
        psi = (psi,)
    psi_cols = np.stack([_as_payoff(p, leaves) for p in psi], axis=1)
    tree = ScenarioTree(times=times, B=B, child_idx=child_idx, edge_db=edge_db,
                        edge_p=edge_p, sigma0=_as_payoff(sigma0, leaves),
                        psi=psi_cols, implicit=True)
    return tree


def binomial_lattice(steps: int, horizon: float,
                     sigma0=0.0, psi=("B",)) -> ScenarioTree:
    """Recombining one-dimensional binomial lattice.

    Level k holds k+1 nodes with B = (2j - k) * sqrt(dt); node j moves to
    j+1 (up) or j (down) with probability 1/2 each.  Node count grows
    quadratically in ``steps``, which makes fine grids cheap, but states
    that depend on the path (not just on the node) cannot live on it.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    dt = horizon / steps
    step = np.sqrt(dt)
    times = np.linspace(0.0, horizon, steps + 1)
    B, child_idx, edge_db, edge_p = [], [], [], []
    for k in range(steps + 1):
        j = np.arange(k + 1)
        B.append(((2 * j - k) * step)[:, None])
        if k < steps:
            child_idx.append(np.stack([j + 1, j], axis=1))
            edge_db.append(np.broadcast_to(np.array([[step], [-step]]),
                                           (k + 1, 2, 1)).copy())
            edge_p.append(np.full((k + 1, 2), 0.5))
    leaves = B[-1]
    if isinstance(psi, (str, int, float)) or callable(psi):
        psi = (psi,)
    psi_cols = np.stack([_as_payoff(p, leaves) for p in psi], axis=1)
    return ScenarioTree(times=times, B=B, child_idx=child_idx, edge_db=edge_db,
                        edge_p=edge_p, sigma0=_as_payoff(sigma0, leaves),
                        psi=psi_cols, implicit=False)
