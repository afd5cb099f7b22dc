"""Finite-state continuous-time Markov chain generators.

Validation, stationary laws, measure-dependent rates, the two-time-scale
generator ``Q_eps = Q_fast / eps + Q_slow`` with its block-averaged limit, and
first-order path sampling on a fixed time grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .catalog import ScalarFunction
from ._report import Report

ROW_TOL = 1e-12
RANK_TOL = 1e-9


class IrreducibilityError(ValueError):
    pass


class StepSizeError(ValueError):
    pass


def validate_generator(G, tol=ROW_TOL):
    """Check off-diagonals are nonnegative and rows sum to zero."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"generator must be square, got shape {G.shape}")
    n = G.shape[0]
    for p in range(n):
        for q in range(n):
            if p != q and G[p, q] < 0:
                return Report.fail(f"negative off-diagonal rate G[{p},{q}]={G[p, q]!r}")
    sums = G.sum(axis=1)
    for p in range(n):
        if abs(sums[p]) > tol:
            return Report.fail(f"row {p} sums to {sums[p]!r}")
    return Report.ok()


def check_generator(G):
    G = np.asarray(G, dtype=float)
    rep = validate_generator(G)
    if not rep:
        raise ValueError(rep.message)
    return G


def check_chain_law(l, size=None, tol=ROW_TOL):
    """Return ``l`` as a probability vector or raise ValueError."""
    l = np.asarray(l, dtype=float).ravel()
    if size is not None and l.shape[0] != size:
        raise ValueError(f"chain law has {l.shape[0]} states, expected {size}")
    if np.any(l < 0):
        raise ValueError("chain law has negative weights")
    if abs(l.sum() - 1.0) > tol:
        raise ValueError(f"chain law sums to {l.sum()!r}")
    return l


def is_irreducible(G, tol=RANK_TOL):
    """Rank test: G restricted to the complement of constants has rank n - 1."""
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    if n == 1:
        return True
    # orthonormal basis of the complement of the constant vector
    basis = np.linalg.svd(np.eye(n) - 1.0 / n)[0][:, : n - 1]
    s = np.linalg.svd(G.T @ basis, compute_uv=False)
    scale = max(1.0, np.abs(G).max())
    return int(np.sum(s > tol * scale)) == n - 1


def stationary_distribution(G):
    """Solve ``[G^T; 1^T] v = [0; 1]`` in the least-squares sense."""
    G = check_generator(G)
    n = G.shape[0]
    if not is_irreducible(G):
        raise IrreducibilityError("generator is reducible; stationary law is not unique")
    A = np.vstack([G.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    v = np.linalg.lstsq(A, rhs, rcond=None)[0]
    v = np.clip(v, 0.0, None)
    return v / v.sum()


@dataclass
class TwoScaleSpec:
    """Block structure ``M = M_1 u ... u M_L`` with fast block generators and a slow generator."""

    blocks: list
    fast: list
    slow: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        self.blocks = [int(b) for b in self.blocks]
        self.fast = [check_generator(f) for f in self.fast]
        self.slow = check_generator(self.slow)
        if len(self.fast) != len(self.blocks):
            raise ValueError("one fast generator per block is required")
        for k, (b, f) in enumerate(zip(self.blocks, self.fast)):
            if f.shape != (b, b):
                raise ValueError(f"fast block {k} has shape {f.shape}, expected {(b, b)}")
        if self.slow.shape[0] != self.size:
            raise ValueError(f"slow generator has size {self.slow.shape[0]}, expected {self.size}")

    @property
    def size(self):
        return sum(self.blocks)

    @property
    def n_blocks(self):
        return len(self.blocks)

    def block_index(self):
        """Block label of every fine state."""
        return np.repeat(np.arange(self.n_blocks), self.blocks)

    def with_epsilon(self, epsilon):
        return TwoScaleSpec(self.blocks, self.fast, self.slow, epsilon)

    @classmethod
    def trading(cls, lam1, lam2, mu1, mu2, epsilon=1.0):
        """Four-state market chain: fast secondary indicator, slow primary trend."""
        fast = np.array([[-lam1, lam1], [lam2, -lam2]], dtype=float)
        slow = np.array(
            [
                [-mu1, 0, mu1, 0],
                [0, -mu1, 0, mu1],
                [mu2, 0, -mu2, 0],
                [0, mu2, 0, -mu2],
            ],
            dtype=float,
        )
        return cls([2, 2], [fast, fast.copy()], slow, epsilon)


def build_epsilon_generator(spec):
    if not spec.epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {spec.epsilon!r}")
    Q = block_diag(*spec.fast) / spec.epsilon + spec.slow
    # fast rows sum to zero exactly only up to rounding after scaling
    Q[np.diag_indices_from(Q)] = 0.0
    Q[np.diag_indices_from(Q)] = -Q.sum(axis=1)
    return Q


def block_stationary(spec):
    return [stationary_distribution(f) for f in spec.fast]


def averaged_generator(spec):
    """``diag(v^1..v^L) Q_slow diag(1_{m_1}..1_{m_L})`` on the L aggregated states."""
    vs = block_stationary(spec)
    left = block_diag(*[v.reshape(1, -1) for v in vs])
    right = block_diag(*[np.ones((b, 1)) for b in spec.blocks])
    Qbar = left @ spec.slow @ right
    Qbar[np.diag_indices_from(Qbar)] = 0.0
    Qbar[np.diag_indices_from(Qbar)] = -Qbar.sum(axis=1)
    return Qbar


def aggregate_chain_law(spec, l):
    l = check_chain_law(l, spec.size)
    return np.bincount(spec.block_index(), weights=l, minlength=spec.n_blocks)


@dataclass
class RateFunction:
    """State-dependent jump rates ``x -> lambda_pq(x)`` for p != q."""

    n_states: int
    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        for (p, q), fn in self.rates.items():
            if p == q or not (0 <= p < self.n_states and 0 <= q < self.n_states):
                raise ValueError(f"invalid rate index {(p, q)}")
            if fn.kind not in ("constant", "affine_pos", "quadratic"):
                raise ValueError(f"rate kind {fn.kind!r} is not in the rate catalog")

    @classmethod
    def constant(cls, G):
        G = check_generator(G)
        n = G.shape[0]
        rates = {
            (p, q): ScalarFunction("constant", (G[p, q],))
            for p in range(n)
            for q in range(n)
            if p != q and G[p, q] != 0
        }
        return cls(n, rates)

    def pointwise(self, x):
        """Rates at each point, shape (n, M, M) with zero diagonal."""
        from .catalog import as_points

        x = as_points(x)
        out = np.zeros((x.shape[0], self.n_states, self.n_states))
        for (p, q), fn in self.rates.items():
            out[:, p, q] = fn(x)
        return out

    def check_domain(self, x):
        lam = self.pointwise(x)
        if np.any(lam < 0):
            idx = np.argwhere(lam < 0)[0]
            return Report.fail(f"rate ({idx[1]},{idx[2]}) negative at sample {idx[0]}")
        return Report.ok()

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "entries": [{"from": p, "to": q, "fn": fn.to_dict()} for (p, q), fn in sorted(self.rates.items())],
        }


def as_rate_function(rf):
    if isinstance(rf, RateFunction):
        return rf
    return RateFunction.constant(rf)


def extended_rates(rf, m):
    """``lambda_pq(m) = sum_i int lambda_pq(x) m(dx, i)`` with diagonal set to minus row sums."""
    from .measure import check_law

    m = check_law(m)
    rf = as_rate_function(rf)
    lam = np.einsum("n,npq->pq", m.weights, rf.pointwise(m.x))
    lam[np.diag_indices_from(lam)] = 0.0
    lam[np.diag_indices_from(lam)] = -lam.sum(axis=1) + 0.0
    return lam


def check_step(G, dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    worst = dt * np.max(np.abs(np.diag(G))) if G.size else 0.0
    if worst > 0.5:
        raise StepSizeError(f"dt*max|lambda_pp| = {worst:.3g} exceeds 0.5; reduce dt")


def step_states(states, G, dt, u):
    """Advance integer chain states one Euler step with uniforms ``u``."""
    P = np.eye(G.shape[0]) + G * dt
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    return (u[:, None] > cum[states]).sum(axis=1)


@dataclass
class ChainPath:
    times: np.ndarray
    states: np.ndarray
    occupancy: np.ndarray
    jumps: int


def sample_chain_path(rates, l0, horizon, dt, seed):
    """Sample one piecewise-constant path on the grid ``0, dt, ..., horizon``.

    ``rates`` is either a generator matrix or a callable ``(k, t, state) -> G``.
    Jump probability from p to q over one step is ``lambda_pq * dt``.
    Occupancy is the fraction of grid intervals spent in each state.
    """
    rng = np.random.default_rng(seed)
    n_steps = int(round(horizon / dt))
    source = rates if callable(rates) else None
    G = None if source else check_generator(rates)
    M = G.shape[0] if G is not None else len(np.asarray(l0))
    l0 = check_chain_law(l0, M)
    state = int(rng.choice(M, p=l0))
    states = np.empty(n_steps + 1, dtype=np.int64)
    states[0] = state
    u = rng.random(n_steps)
    counts = np.zeros(M)
    jumps = 0
    if source is None:
        check_step(G, dt)
        cum = np.cumsum(np.eye(M) + G * dt, axis=1)
        cum[:, -1] = 1.0
        rows = cum.tolist()
        for k in range(n_steps):
            counts[state] += 1
            row = rows[state]
            nxt = 0
            uk = u[k]
            while uk > row[nxt]:
                nxt += 1
            jumps += nxt != state
            state = nxt
            states[k + 1] = state
    else:
        for k in range(n_steps):
            Gk = check_generator(source(k, k * dt, state))
            check_step(Gk, dt)
            counts[state] += 1
            nxt = int(step_states(np.array([state]), Gk, dt, u[k : k + 1])[0])
            jumps += nxt != state
            state = nxt
            states[k + 1] = state
    occupancy = counts / max(n_steps, 1)
    return ChainPath(np.arange(n_steps + 1) * dt, states, occupancy, jumps)
