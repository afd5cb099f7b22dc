"""Finitely supported laws on the hybrid space R^d x {0..N-1}.

Includes exact optimal transport between such laws and the mode-relabelling
kernels that generate the intervention order ``m' <= m``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ._report import Report
from .catalog import as_points

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-12
ENUMERATION_MAX_ATOMS = 4


class KernelError(ValueError):
    pass


class SupportMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """Atoms ``(x_k, i_k)`` with weights ``w_k``.

    x : (n, d) float, modes : (n,) int, weights : (n,) float.
    """

    x: np.ndarray
    modes: np.ndarray
    weights: np.ndarray
    n_modes: int = 2

    def __post_init__(self):
        x = as_points(self.x)
        modes = np.asarray(self.modes, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (x.shape[0] == modes.shape[0] == w.shape[0]):
            raise ValueError("x, modes and weights must have the same number of atoms")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "n_modes", int(self.n_modes))

    @classmethod
    def from_atoms(cls, atoms, n_modes=2):
        """Build from ``[(x, mode, weight), ...]``."""
        if len(atoms) == 0:
            return cls(np.zeros((0, 1)), np.zeros(0, dtype=int), np.zeros(0), n_modes)
        xs = [np.atleast_1d(np.asarray(a[0], dtype=float)) for a in atoms]
        return cls(np.vstack(xs), [a[1] for a in atoms], [a[2] for a in atoms], n_modes)

    @classmethod
    def dirac(cls, x, mode, n_modes=2):
        return cls.from_atoms([(x, mode, 1.0)], n_modes)

    @classmethod
    def empirical(cls, x, modes, n_modes=2):
        n = len(modes)
        return cls(x, modes, np.full(n, 1.0 / n), n_modes)

    @property
    def size(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def mode_mass(self, i):
        return float(self.weights[self.modes == i].sum())

    def mode_masses(self):
        return np.bincount(self.modes, weights=self.weights, minlength=self.n_modes)

    def merged(self, tol=MERGE_TOL):
        """Combine atoms with the same mode and x within ``tol`` componentwise; drop zero weights."""
        keep = self.weights > 0
        x, modes, w = self.x[keep], self.modes[keep], self.weights[keep]
        if x.shape[0] == 0:
            return DiscreteLaw(x, modes, w, self.n_modes)
        order = np.lexsort(tuple(x[:, c] for c in reversed(range(x.shape[1]))) + (modes,))
        out_x, out_m, out_w = [], [], []
        for k in order:
            if out_x and out_m[-1] == modes[k] and np.all(np.abs(out_x[-1] - x[k]) <= tol):
                out_w[-1] += w[k]
            else:
                out_x.append(x[k])
                out_m.append(modes[k])
                out_w.append(w[k])
        return DiscreteLaw(np.array(out_x), out_m, out_w, self.n_modes)

    def records(self):
        """``(x-vector, mode, weight)`` tuples."""
        return [(self.x[k].tolist(), int(self.modes[k]), float(self.weights[k])) for k in range(self.size)]

    def to_dict(self):
        return {
            "n_modes": self.n_modes,
            "atoms": [{"x": xk, "mode": i, "weight": w} for xk, i, w in self.records()],
        }

    @classmethod
    def from_dict(cls, d):
        atoms = [(a["x"], a["mode"], a["weight"]) for a in d["atoms"]]
        return cls.from_atoms(atoms, d.get("n_modes", 2))


def validate_law(m, tol=WEIGHT_TOL):
    if m.size == 0:
        return Report.fail("law has empty support")
    if np.any(~np.isfinite(m.x)):
        return Report.fail("non-finite atom location")
    bad = np.flatnonzero(m.weights < 0)
    if bad.size:
        return Report.fail(f"negative weight {m.weights[bad[0]]!r} at atom {bad[0]}")
    bad = np.flatnonzero((m.modes < 0) | (m.modes >= m.n_modes))
    if bad.size:
        return Report.fail(f"mode {m.modes[bad[0]]} at atom {bad[0]} outside 0..{m.n_modes - 1}")
    total = m.weights.sum()
    if abs(total - 1.0) > tol:
        return Report.fail(f"weights sum to {total!r}")
    return Report.ok()


def check_law(m):
    rep = validate_law(m)
    if not rep:
        raise ValueError(rep.message)
    return m


def mode_moment(m, i, psi):
    """``sum over atoms in mode i of weight * psi(x)``."""
    sel = m.modes == i
    if not np.any(sel):
        return 0.0
    return float(np.dot(m.weights[sel], psi(m.x[sel])))


def ground_cost(m1, m2, kappa=1.0):
    dx = np.linalg.norm(m1.x[:, None, :] - m2.x[None, :, :], axis=2)
    return dx + kappa * (m1.modes[:, None] != m2.modes[None, :])


def _tree_flow(edges, a, b):
    """Flows on a spanning tree of the bipartite supply/demand graph, or None if not a tree."""
    n, k = len(a), len(b)
    parent = list(range(n + k))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for i, j in edges:
        ri, rj = find(i), find(n + j)
        if ri == rj:
            return None
        parent[ri] = rj
    resid = list(a) + list(b)
    adj = {u: set() for u in range(n + k)}
    for i, j in edges:
        adj[i].add(n + j)
        adj[n + j].add(i)
    flow = {}
    leaves = [u for u in adj if len(adj[u]) == 1]
    while leaves:
        u = leaves.pop()
        if len(adj[u]) != 1:
            continue
        v = adj[u].pop()
        adj[v].discard(u)
        f = resid[u]
        resid[v] -= f
        resid[u] = 0.0
        i, j = (u, v - n) if u < n else (v, u - n)
        flow[(i, j)] = f
        if len(adj[v]) == 1:
            leaves.append(v)
    return flow


def transport_enumeration(a, b, C):
    """Exact transport cost by enumerating every spanning-tree basic solution."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n, k = len(a), len(b)
    cells = [(i, j) for i in range(n) for j in range(k)]
    best = np.inf
    tol = 1e-12
    for edges in itertools.combinations(cells, n + k - 1):
        flow = _tree_flow(edges, a, b)
        if flow is None or min(flow.values()) < -tol:
            continue
        cost = sum(max(f, 0.0) * C[i, j] for (i, j), f in flow.items())
        best = min(best, cost)
    return float(best)


def transport_lp(a, b, C):
    """Exact transport cost via the HiGHS dual simplex on the bipartite support graph."""
    n, k = len(a), len(b)
    A = np.zeros((n + k, n * k))
    for i in range(n):
        A[i, i * k : (i + 1) * k] = 1.0
    for j in range(k):
        A[n + j, j::k] = 1.0
    res = linprog(np.ravel(C), A_eq=A[:-1], b_eq=np.concatenate([a, b])[:-1], bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def wasserstein(m1, m2, order=1, kappa=1.0):
    """``W_order`` under ``d((x,i),(x',i')) = |x - x'| + kappa * [i != i']``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    m1 = check_law(m1).merged()
    m2 = check_law(m2).merged()
    C = ground_cost(m1, m2, kappa) ** order
    a, b = m1.weights, m2.weights
    if m1.size == 1 or m2.size == 1:
        cost = float(np.dot(a, C[:, 0]) if m2.size == 1 else np.dot(b, C[0]))
    elif max(m1.size, m2.size) <= ENUMERATION_MAX_ATOMS:
        cost = transport_enumeration(a, b, C)
    else:
        cost = transport_lp(a, b, C)
    cost = max(cost, 0.0)
    return cost if order == 1 else float(np.sqrt(cost))


def check_kernel(m, K, tol=WEIGHT_TOL):
    K = np.asarray(K, dtype=float)
    if K.shape != (m.size, m.n_modes):
        raise KernelError(f"kernel shape {K.shape} does not match (atoms, modes) = {(m.size, m.n_modes)}")
    if np.any(K < -tol) or np.any(K > 1 + tol):
        raise KernelError("kernel entries must lie in [0, 1]")
    bad = np.flatnonzero(np.abs(K.sum(axis=1) - 1.0) > tol)
    if bad.size:
        raise KernelError(f"kernel row {bad[0]} sums to {K[bad[0]].sum()!r}")
    return K


def identity_kernel(m):
    K = np.zeros((m.size, m.n_modes))
    K[np.arange(m.size), m.modes] = 1.0
    return K


def relabeled_mass(m, K):
    """Mass moved away from its current mode; positive means ``m' < m`` strictly."""
    K = np.asarray(K, dtype=float)
    return float(np.dot(m.weights, 1.0 - K[np.arange(m.size), m.modes]))


def apply_kernel(m, K):
    """``m'(dx, j) = sum_i p_ij(x) m(dx, i)`` with atoms at identical (x, j) merged."""
    K = check_kernel(m, K)
    n, N = m.size, m.n_modes
    x = np.repeat(m.x, N, axis=0)
    modes = np.tile(np.arange(N), n)
    w = (m.weights[:, None] * K).ravel()
    return DiscreteLaw(x, modes, w, N).merged()


def x_groups(m, tol=MERGE_TOL):
    """Group atom indices by x location (within ``tol``)."""
    groups = []
    for k in range(m.size):
        for g in groups:
            if np.all(np.abs(m.x[g[0]] - m.x[k]) <= tol):
                g.append(k)
                break
        else:
            groups.append([k])
    return groups


def is_dominated(m_prime, m, tol=1e-12):
    """Decide ``m' <= m``; return ``(True, kernel)`` or ``(False, None)``.

    Only defined when both laws live on the same set of x locations.
    The witness kernel keeps mass in place wherever possible.
    """
    m_prime, m = check_law(m_prime), check_law(m)
    if m_prime.n_modes != m.n_modes:
        raise ValueError("laws have different mode counts")
    gp, g = x_groups(m_prime.merged()), x_groups(m)
    mp = m_prime.merged()
    locs = [m.x[grp[0]] for grp in g]
    locs_p = [mp.x[grp[0]] for grp in gp]

    def match(loc, pool):
        for idx, other in enumerate(pool):
            if np.all(np.abs(other - loc) <= MERGE_TOL):
                return idx
        return None

    pairing = [match(loc, locs_p) for loc in locs]
    if any(p is None for p in pairing) or len(locs_p) != len(locs):
        raise SupportMismatchError("x supports differ; dominance requires identical x-marginal supports")
    N = m.n_modes
    K = np.zeros((m.size, N))
    for grp, pidx in zip(g, pairing):
        have = np.zeros(N)
        np.add.at(have, m.modes[grp], m.weights[grp])
        want = np.zeros(N)
        np.add.at(want, mp.modes[gp[pidx]], mp.weights[gp[pidx]])
        if abs(have.sum() - want.sum()) > tol:
            return False, None
        keep = np.minimum(have, want)
        surplus = have - keep
        deficit = np.clip(want - keep, 0.0, None)
        D = deficit.sum()
        for k in grp:
            i = m.modes[k]
            row = np.zeros(N)
            if have[i] > 0:
                row[i] = keep[i] / have[i]
                if D > 0:
                    row += surplus[i] / have[i] * deficit / D
            else:
                row[i] = 1.0
            K[k] = row / row.sum()
    return True, K
