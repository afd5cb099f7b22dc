"""Verification harnesses: Ito formula along particle flows, dynamic programming
on small discrete instances, and two-time-scale convergence of the market chain."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .chain import (
    TwoScaleSpec,
    aggregate_chain_law,
    block_stationary,
    build_epsilon_generator,
    check_chain_law,
    check_generator,
    sample_chain_path,
)
from .functional import atom_derivatives, eval_functional, generator_Q, time_derivative, transport_term

# --------------------------------------------------------------------------
# Ito formula


@dataclass
class ItoReport:
    """Both sides of the Ito expansion of ``u(t, m_t; l_t)`` along an empirical flow.

    ``lhs = u(T, m_T-) - u(t0, m_t0-)``; the right side is the sum of the
    time-plus-chain term, the drift/diffusion term, the measure jumps at
    policy times and the path-jump term.
    """

    lhs: float
    time_chain: float
    transport: float
    measure_jumps: float
    path_jumps: float
    dt: float
    n_particles: int
    constant: float | None = None

    @property
    def rhs(self):
        return self.time_chain + self.transport + self.measure_jumps + self.path_jumps

    @property
    def residual(self):
        return abs(self.lhs - self.rhs)

    @property
    def budget(self):
        if self.constant is None:
            return None
        return self.constant * (self.dt + self.n_particles**-0.5)

    @property
    def passed(self):
        return self.budget is None or self.residual <= self.budget

    def terms(self):
        return {
            "lhs": self.lhs,
            "time_chain": self.time_chain,
            "transport": self.transport,
            "measure_jumps": self.measure_jumps,
            "path_jumps": self.path_jumps,
            "rhs": self.rhs,
            "residual": self.residual,
        }


class KinkError(ValueError):
    """The functional hits a non-differentiable point along the flow."""


class ItoAccumulator:
    """Flow observer accumulating the Ito terms step by step.

    Pass it as ``observer`` to ``flow.simulate`` to avoid storing the flow.
    Integrals use the left-point rule on the step grid.  Modes change only
    at policy times, which are measure-jump times, so the path-jump term is
    identically zero for simulated flows.
    """

    def __init__(self, u, coeffs, rf, kink_band=0.0):
        self.u = u
        self.coeffs = coeffs
        self.rf = rf
        self.kink_band = kink_band
        self.time_chain = 0.0
        self.transport = 0.0
        self.jumps = 0.0
        self.start_value = None
        self.end_value = None
        self.dt = None
        self.n = None

    def _guard(self, t, m):
        if self.u.at_kink(t, m, self.kink_band):
            raise KinkError(f"functional is at a kink at t={t!r}; Ito check refused")

    def start(self, t, m, l):
        self._guard(t, m)
        self.start_value = eval_functional(self.u, t, m, l)
        self.n = m.size

    def intervention(self, t, m_before, l_before, m_after, l_after):
        self._guard(t, m_after)
        self.jumps += eval_functional(self.u, t, m_after, l_after) - eval_functional(self.u, t, m_before, l_before)

    def step(self, t, dt, m, l):
        self._guard(t, m)
        self.dt = dt if self.dt is None else self.dt
        cache = atom_derivatives(self.u, t, m)
        self.time_chain += (time_derivative(self.u, t, m, l, cache) + generator_Q(self.u, t, m, l, self.rf, cache)) * dt
        self.transport += transport_term(self.u, t, m, l, self.coeffs, cache) * dt

    def end(self, t, m, l):
        self._guard(t, m)
        self.end_value = eval_functional(self.u, t, m, l)

    def report(self, constant=None):
        return ItoReport(
            self.end_value - self.start_value,
            self.time_chain,
            self.transport,
            self.jumps,
            0.0,
            self.dt,
            self.n,
            constant,
        )


def ito_check(u, flow, coeffs, rf, constant=None, kink_band=0.0):
    """Replay a recorded flow through an ItoAccumulator."""
    if flow.record_every != 1:
        raise ValueError("ito_check needs every step recorded")
    acc = ItoAccumulator(u, coeffs, rf, kink_band)
    acc.start(flow.times[0], flow.law(0, before=True), flow.chain_law(0))
    K = flow.times.size
    for k in range(K - 1):
        if k in flow.pre_modes:
            lk = flow.chain_law(k)
            acc.intervention(flow.times[k], flow.law(k, before=True), lk, flow.law(k), lk)
        acc.step(flow.times[k], flow.times[k + 1] - flow.times[k], flow.law(k), flow.chain_law(k))
    acc.end(flow.times[-1], flow.law(K - 1), flow.chain_law(K - 1))
    return acc.report(constant)


# --------------------------------------------------------------------------
# dynamic programming on discrete instances

FRACTIONS = (0.0, 0.5, 1.0)
ENUMERATION_BUDGET = 10**6


class BudgetError(ValueError):
    """The number of action sequences exceeds the enumeration budget."""


@dataclass
class DiscreteInstance:
    """Finite switching problem whose law evolves deterministically.

    The state is a law ``m`` on (x grid) x (modes), stored as an array of
    shape (n_x, N), and a chain law ``l``.  At every step k < n_steps the
    controller picks, per grid point x, a fraction p from ``fractions`` of
    each mode's mass at x that swaps to the other mode (N = 2), paying
    ``cost[x, i, j]`` per unit of moved mass.  Then a running reward
    ``dt * sum_q l(q) sum_{x,i} m(x, i) f[i, q, x]`` accrues and the law moves
    with ``m'(., i) = sum_q l(q) m(., i) P[i, q]``, ``l' = l chain``.
    The terminal reward is ``sum_q l(q) sum_{x,i} m(x, i) h[i, q, x]``.
    """

    x: np.ndarray
    transitions: np.ndarray
    chain: np.ndarray
    cost: np.ndarray
    f: np.ndarray
    h: np.ndarray
    n_steps: int
    dt: float = 1.0
    fractions: tuple = FRACTIONS

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.transitions = np.asarray(self.transitions, float)
        self.chain = np.asarray(self.chain, float)
        self.cost = np.asarray(self.cost, float)
        self.f = np.asarray(self.f, float)
        self.h = np.asarray(self.h, float)
        self.fractions = tuple(float(p) for p in self.fractions)
        nx, N, M = self.n_x, self.n_modes, self.n_chain
        if nx > 5 or N > 2 or M > 2 or self.n_steps > 5:
            raise ValueError("instance exceeds the desk-scale limits (5 points, 2 modes, 2 chain states, 5 steps)")
        if self.transitions.shape != (N, M, nx, nx):
            raise ValueError("transitions must have shape (modes, chain, n_x, n_x)")
        for P in (self.transitions.reshape(-1, nx), self.chain):
            if np.any(P < 0) or np.any(np.abs(P.sum(axis=-1) - 1) > 1e-12):
                raise ValueError("transition matrices must be row-stochastic")
        if self.cost.shape != (nx, N, N) or np.any(np.diagonal(self.cost, axis1=1, axis2=2) != 0):
            raise ValueError("cost table must have shape (n_x, N, N) with zero diagonal")
        off = ~np.eye(N, dtype=bool)
        if np.any(self.cost[:, off] <= 0):
            raise ValueError("switching costs must satisfy the strict triangle condition")
        if self.f.shape != (N, M, nx) or self.h.shape != (N, M, nx):
            raise ValueError("f and h must have shape (modes, chain, n_x)")
        if not all(0.0 <= p <= 1.0 for p in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")

    @property
    def n_x(self):
        return self.x.size

    @property
    def n_modes(self):
        return self.transitions.shape[0]

    @property
    def n_chain(self):
        return self.chain.shape[0]

    def chain_laws(self, k, l):
        out = [np.asarray(l, float)]
        for _ in range(k, self.n_steps):
            out.append(out[-1] @ self.chain)
        return out

    def actions(self):
        """All per-x fraction assignments, shape (A, n_x)."""
        grids = np.meshgrid(*[np.array(self.fractions)] * self.n_x, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @classmethod
    def random(cls, rng, n_x=3, n_steps=4, n_chain=2, n_modes=2):
        """Instance with dyadic entries so that every value is computed exactly."""
        def stochastic(shape):
            raw = rng.integers(1, 5, size=shape).astype(float)
            total = raw.sum(axis=-1, keepdims=True)
            # round each row to quarters while keeping the row sum 1
            q = np.floor(raw / total * 4) / 4
            q[..., -1] = 1.0 - q[..., :-1].sum(axis=-1)
            return q

        N, M = n_modes, n_chain
        cost = np.zeros((n_x, N, N))
        off = ~np.eye(N, dtype=bool)
        cost[:, off] = rng.integers(1, 5, size=(n_x, int(off.sum()))) / 32.0
        return cls(
            np.arange(n_x, dtype=float),
            stochastic((N, M, n_x, n_x)),
            stochastic((M, M)),
            cost,
            rng.integers(-8, 9, size=(N, M, n_x)) / 4.0,
            rng.integers(-8, 9, size=(N, M, n_x)) / 4.0,
            n_steps,
            0.25,
        )

    def random_law(self, rng):
        w = rng.integers(0, 4, size=(self.n_x, self.n_modes)).astype(float)
        if w.sum() == 0:
            w[0, 0] = 1.0
        # normalise to a dyadic total
        total = 2.0 ** np.ceil(np.log2(w.sum()))
        w = w / total
        w[0, 0] += 1.0 - w.sum()
        return w


def _apply(inst, m, p):
    """Swap fraction p[x] of each mode at x; vectorised over leading axes of m and p."""
    moved = m * p[..., None]
    new = (m - moved) + moved[..., ::-1]
    cost = np.sum(moved[..., 0] * inst.cost[:, 0, 1] + moved[..., 1] * inst.cost[:, 1, 0], axis=-1)
    return new, cost


def _reward(inst, m, l, table):
    # sum_q l(q) sum_{x,i} m(x,i) table[i,q,x]
    per = np.einsum("q,iqx->xi", l, table)
    return np.sum(m * per, axis=(-2, -1))


def _evolve(inst, m, l):
    P = np.einsum("q,iqxy->ixy", l, inst.transitions)
    return np.einsum("...xi,ixy->...yi", m, P)


def _enumerate(inst, k0, k1, m, l):
    """All action sequences from step k0 to k1: final laws and accumulated rewards.

    ``m`` is one law (n_x, N) or a batch (B, n_x, N); outputs are ordered
    by start law first, then by action sequence.
    """
    A = inst.actions()
    states = np.asarray(m, float)
    states = states[None] if states.ndim == 2 else states
    count = states.shape[0] * A.shape[0] ** (k1 - k0)
    if count > ENUMERATION_BUDGET:
        raise BudgetError(f"{count} action sequences exceed the budget of {ENUMERATION_BUDGET}")
    ls = inst.chain_laws(k0, l)
    acc = np.zeros(states.shape[0])
    for k in range(k0, k1):
        lk = ls[k - k0]
        new, cost = _apply(inst, states[:, None], A[None, :, :])
        run = inst.dt * _reward(inst, new, lk, inst.f)
        acc = (acc[:, None] - cost + run).ravel()
        states = _evolve(inst, new.reshape(-1, inst.n_x, inst.n_modes), lk)
    return states, acc, ls[k1 - k0]


def dpp_enumeration_solver(inst, k, m, l):
    """Exact value from step k by exhaustive enumeration; returns ``(value, actions)``.

    ``actions`` has shape (n_steps - k, n_x) with the chosen fraction per grid point.
    """
    if k > inst.n_steps:
        raise ValueError("step index beyond the horizon")
    l = check_chain_law(l, inst.n_chain)
    states, acc, lT = _enumerate(inst, k, inst.n_steps, m, l)
    total = acc + _reward(inst, states, lT, inst.h)
    best = int(np.argmax(total))
    A = inst.actions()
    n = inst.n_steps - k
    idx = np.unravel_index(best, (A.shape[0],) * n) if n else ()
    return float(total[best]), np.array([A[i] for i in idx]).reshape(n, inst.n_x)


def dpp_memo_oracle(inst, k, m, l):
    """Value by backward recursion with memoisation over (step, law).

    Independent of the enumeration route: one recursive call per reachable
    law, with all actions at that law evaluated together.
    """
    laws = {}
    lk = np.asarray(l, float)
    for j in range(k, inst.n_steps + 1):
        laws[j] = lk
        lk = lk @ inst.chain
    A = inst.actions()
    other = np.array([[0.0, 1.0], [1.0, 0.0]])
    unit_cost = np.stack([inst.cost[:, 0, 1], inst.cost[:, 1, 0]], axis=1)
    P = {j: [sum(laws[j][q] * inst.transitions[i, q] for q in range(inst.n_chain)) for i in range(inst.n_modes)]
         for j in laws}
    per_f = {j: sum(laws[j][q] * inst.f[:, q, :].T for q in range(inst.n_chain)) for j in laws}
    per_h = sum(laws[inst.n_steps][q] * inst.h[:, q, :].T for q in range(inst.n_chain))

    @lru_cache(maxsize=None)
    def value(j, key):
        w = np.frombuffer(key, dtype=float).reshape(inst.n_x, inst.n_modes)
        if j == inst.n_steps:
            return float(np.sum(w * per_h))
        out = w[None] * A[:, :, None]
        new = (w[None] - out) + out @ other
        cost = np.sum(out * unit_cost[None], axis=(1, 2))
        run = inst.dt * np.sum(new * per_f[j][None], axis=(1, 2))
        nxt = np.stack([new[:, :, i] @ P[j][i] for i in range(inst.n_modes)], axis=2)
        now = run - cost
        return max(now[a] + value(j + 1, nxt[a].tobytes()) for a in range(A.shape[0]))

    return value(k, np.ascontiguousarray(m, dtype=float).tobytes())


def dpp_consistency(inst, t, s, m, l):
    """``|V(t) - max over first-segment actions of [reward - costs + V(s)]|``."""
    if not 0 <= t <= s <= inst.n_steps:
        raise ValueError("need 0 <= t <= s <= n_steps")
    l = check_chain_law(l, inst.n_chain)
    full, _ = dpp_enumeration_solver(inst, t, m, l)
    states, acc, ls = _enumerate(inst, t, s, m, l)
    # value at s of every reachable law, by enumeration from s
    ends, tail, lT = _enumerate(inst, s, inst.n_steps, states, ls)
    later = (tail + _reward(inst, ends, lT, inst.h)).reshape(states.shape[0], -1).max(axis=1)
    return abs(full - float(np.max(acc + later)))


# --------------------------------------------------------------------------
# two-time-scale convergence


@dataclass
class ConvergenceTable:
    """Rows ``(epsilon, ratio mean, ratio SE, ratio error, target ratio, value gap)``."""

    rows: np.ndarray

    @property
    def epsilons(self):
        return self.rows[:, 0]

    @property
    def errors(self):
        return self.rows[:, 3]

    @property
    def stderrs(self):
        return self.rows[:, 2]

    def non_increasing(self, z=3.0):
        e, s = self.errors, self.stderrs
        return bool(np.all(e[1:] <= e[:-1] + z * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))


def occupancy_ratio(spec, epsilon, n_steps, seed, block=0, dt=None):
    """Ratio of time spent in the first two states of ``block`` along one simulated path."""
    G = build_epsilon_generator(spec.with_epsilon(epsilon))
    dt = 0.25 / np.max(np.abs(np.diag(G))) if dt is None else dt
    l0 = np.full(spec.size, 1.0 / spec.size)
    path = sample_chain_path(G, l0, n_steps * dt, dt, seed)
    idx = np.flatnonzero(spec.block_index() == block)
    occ = path.occupancy[idx]
    return occ[0] / occ[1]


def two_scale_convergence(spec, epsilons, probes=(), example=None, n_steps=100_000, seeds=range(10), block=0):
    """Convergence table over decreasing epsilons.

    (a) within-block occupancy ratio of the simulated chain against the
        stationary ratio of the fast block;
    (b) when ``example`` (a four-state TradingExampleSpec) is given, the
        largest gap between its candidate and that of the reduced two-state
        spec over ``probes``, each ``(t, m, l)`` with l over the fine states.
    """
    from .trading import example_value, limit_reduction

    eps = list(epsilons)
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be decreasing")
    v = block_stationary(spec)[block]
    target = v[0] / v[1]
    reduced = limit_reduction(example) if example is not None else None
    rows = []
    for e in eps:
        ratios = np.array([occupancy_ratio(spec, e, n_steps, s, block) for s in seeds])
        se = ratios.std(ddof=1) / np.sqrt(ratios.size) if ratios.size > 1 else 0.0
        gap = 0.0
        if example is not None:
            for t, m, l in probes:
                lbar = aggregate_chain_law(spec, l)
                gap = max(gap, abs(example_value(example, t, m, l) - example_value(reduced, t, m, lbar)))
        rows.append([e, ratios.mean(), se, abs(ratios.mean() - target), target, gap])
    return ConvergenceTable(np.asarray(rows))
