"""Cylindrical value-function candidates and the obstacle-problem operators.

A candidate has the form ``u(t, m; l) = sum_q l(q) phi_q(t, v(m))`` with
moments ``v_j(m) = <psi_j, m(., i_j)>``.  Its linear derivative in (l, m) at
chain state q is ``sum_j d phi_q / d v_j * psi_j(x) * [i == i_j]``, which gives
the drift/diffusion generator, the chain generator, the intervention operator
``M[u]`` and the residuals of the variational inequality in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import ScalarFunction, TimeFactor, as_points
from .chain import (
    TwoScaleSpec,
    as_rate_function,
    averaged_generator,
    block_stationary,
    check_chain_law,
)
from .measure import DiscreteLaw, check_law, relabeled_mass
from .model import CoefficientSet, aggregate_F

TERM_KINDS = ("poly", "min", "pos", "product")
STRICT_MASS = 1e-9


@dataclass
class Term:
    """One summand ``tau(t) * g_q(v)`` of the outer map.

    poly    : sum_k coef[q, k] * v_j**k
    min     : coef[q] * min(v_j, level[q])
    pos     : coef[q] * max(v_j - level[q], 0)
    product : coef[q] * v_j * v_index2
    """

    kind: str
    index: int
    coef: object
    level: object = 0.0
    index2: int = 0
    time: TimeFactor = field(default_factory=TimeFactor)

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        self.coef = np.asarray(self.coef, dtype=float)
        self.level = np.asarray(self.level, dtype=float)

    def _coef(self, q):
        if self.kind == "poly":
            return self.coef[q] if self.coef.ndim == 2 else self.coef
        return self.coef[q] if self.coef.ndim else self.coef

    def _level(self, q):
        return self.level[q] if self.level.ndim else self.level

    def value(self, V, q):
        v = V[:, self.index]
        c = self._coef(q)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(v, c)
        if self.kind == "min":
            return c * np.minimum(v, self._level(q))
        if self.kind == "pos":
            return c * np.maximum(v - self._level(q), 0.0)
        return c * v * V[:, self.index2]

    def grad(self, V, q):
        """Gradient in v, (k, J).  At a kink the branch active from below is used."""
        g = np.zeros_like(V)
        v = V[:, self.index]
        c = self._coef(q)
        if self.kind == "poly":
            g[:, self.index] = np.polynomial.polynomial.polyval(v, np.polynomial.polynomial.polyder(c)) if c.size > 1 else 0.0
        elif self.kind == "min":
            g[:, self.index] = np.where(v <= self._level(q), c, 0.0)
        elif self.kind == "pos":
            g[:, self.index] = np.where(v > self._level(q), c, 0.0)
        else:
            g[:, self.index] += c * V[:, self.index2]
            g[:, self.index2] += c * v
        return g

    def hess(self, V, q):
        J = V.shape[1]
        H = np.zeros((V.shape[0], J, J))
        c = self._coef(q)
        if self.kind == "poly" and c.size > 2:
            d2 = np.polynomial.polynomial.polyder(c, 2)
            H[:, self.index, self.index] = np.polynomial.polynomial.polyval(V[:, self.index], d2)
        elif self.kind == "product":
            H[:, self.index, self.index2] += c
            H[:, self.index2, self.index] += c
        return H

    def kink_distance(self, V, q):
        if self.kind in ("min", "pos") and self._coef(q) != 0:
            return np.abs(V[:, self.index] - self._level(q))
        return np.full(V.shape[0], np.inf)


@dataclass
class CylindricalFunctional:
    """``u(t, m; l) = sum_q l(q) sum_terms tau(t) g_q(v(m))``.

    basis : list of ``(mode or None, ScalarFunction)``; mode None integrates
    over every mode.
    """

    basis: list
    terms: list
    n_chain: int = 1
    n_modes: int = 2
    kink_tol: float = 0.0

    @property
    def n_moments(self):
        return len(self.basis)

    def moments(self, m):
        v = np.empty(self.n_moments)
        for j, (mode, psi) in enumerate(self.basis):
            sel = np.ones(m.size, bool) if mode is None else (m.modes == mode)
            v[j] = np.dot(m.weights[sel], psi(m.x[sel])) if np.any(sel) else 0.0
        return v

    def phi(self, t, V, q):
        V = np.atleast_2d(V)
        return sum((tm.time(t) * tm.value(V, q) for tm in self.terms), np.zeros(V.shape[0]))

    def phi_t(self, t, V, q):
        V = np.atleast_2d(V)
        return sum((tm.time.dt(t) * tm.value(V, q) for tm in self.terms), np.zeros(V.shape[0]))

    def phi_v(self, t, V, q):
        V = np.atleast_2d(V)
        return sum((tm.time(t) * tm.grad(V, q) for tm in self.terms), np.zeros_like(V))

    def phi_vv(self, t, V, q):
        V = np.atleast_2d(V)
        J = V.shape[1]
        return sum((tm.time(t) * tm.hess(V, q) for tm in self.terms), np.zeros((V.shape[0], J, J)))

    def value_moments(self, t, V, l):
        """Vectorised value at moment vectors V (k, J)."""
        V = np.atleast_2d(V)
        out = np.zeros(V.shape[0])
        for q in range(self.n_chain):
            if l[q] != 0:
                out += l[q] * self.phi(t, V, q)
        return out

    def kink_distance(self, t, m):
        V = self.moments(m)[None, :]
        d = np.inf
        for q in range(self.n_chain):
            for tm in self.terms:
                if tm.time(t) != 0:
                    d = min(d, float(tm.kink_distance(V, q)[0]))
        return d

    def at_kink(self, t, m, band=None):
        band = self.kink_tol if band is None else band
        return self.kink_distance(t, m) <= band

    def basis_table(self, x, i, dim):
        """Basis values and their x-derivatives at points (x, i) with mode masks applied.

        Returns arrays of shape (n, J), (n, J, d) and (n, J, d).
        """
        x = as_points(x, dim)
        i = np.broadcast_to(np.asarray(i), (x.shape[0],))
        n, J = x.shape[0], self.n_moments
        P0 = np.zeros((n, J))
        P1 = np.zeros((n, J, x.shape[1]))
        P2 = np.zeros((n, J, x.shape[1]))
        for j, (mode, psi) in enumerate(self.basis):
            mask = np.ones(n, bool) if mode is None else (i == mode)
            if not np.any(mask):
                continue
            P0[mask, j] = psi(x[mask])
            P1[mask, j] = psi.grad(x[mask], dim)
            P2[mask, j] = psi.hess_diag(x[mask], dim)
        return P0, P1, P2

    def gradients(self, t, V):
        """``d phi_q / d v`` for every chain state, shape (n_chain, J)."""
        V = np.atleast_2d(V)
        return np.stack([self.phi_v(t, V, q)[0] for q in range(self.n_chain)])

    def derivative_parts(self, t, m, x, i, q):
        """Linear derivative at chain state q and its x-derivatives, for points (x, i)."""
        P0, P1, P2 = self.basis_table(x, i, m.dim)
        g = self.phi_v(t, self.moments(m)[None, :], q)[0]
        return P0 @ g, np.einsum("njd,j->nd", P1, g), np.einsum("njd,j->nd", P2, g)


@dataclass
class AtomDerivatives:
    """Linear derivatives of u at the atoms of m for every chain state."""

    moments: np.ndarray
    value: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray


def atom_derivatives(u, t, m):
    P0, P1, P2 = u.basis_table(m.x, m.modes, m.dim)
    V = m.weights @ P0
    G = u.gradients(t, V)
    return AtomDerivatives(V, P0 @ G.T, np.einsum("njd,qj->nqd", P1, G), np.einsum("njd,qj->nqd", P2, G))


def _law(m):
    return check_law(m)


def eval_functional(u, t, m, l):
    m = _law(m)
    if np.any(m.modes >= u.n_modes):
        raise ValueError("law has modes outside the functional's mode set")
    l = check_chain_law(l, u.n_chain)
    return float(u.value_moments(t, u.moments(m)[None, :], l)[0])


@dataclass
class LinearDerivative:
    value: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    kink: bool


def linear_derivative(u, t, m, y, l, q):
    """``delta_{l,m} u(t, m, y; l, q)`` with its first and (diagonal) second x-derivatives.

    ``y`` is ``(x, i)`` or ``(array of x, array of i)``.
    """
    m = _law(m)
    check_chain_law(l, u.n_chain)
    x, i = y
    val, dx, dxx = u.derivative_parts(t, m, x, i, q)
    return LinearDerivative(val, dx, dxx, bool(u.at_kink(t, m)))


def finite_difference_lift(u, t, m, y, l, q, h):
    """``(u((1-h) m + h delta_y) - u(m)) / h`` evaluated at ``l = delta_q``."""
    x, i = y
    lq = np.zeros(u.n_chain)
    lq[q] = 1.0
    mixed = DiscreteLaw(
        np.vstack([m.x, as_points(x, m.dim)]),
        np.concatenate([m.modes, [i]]),
        np.concatenate([(1 - h) * m.weights, [h]]),
        m.n_modes,
    )
    return (eval_functional(u, t, mixed, lq) - eval_functional(u, t, m, lq)) / h


def richardson_lift(u, t, m, y, l, q, h=1e-3, ratio=10.0):
    """Richardson-extrapolated lift; estimates ``delta u(y) - int delta u dm``."""
    coarse = finite_difference_lift(u, t, m, y, l, q, h)
    fine = finite_difference_lift(u, t, m, y, l, q, h / ratio)
    return (ratio * fine - coarse) / (ratio - 1.0)


def time_derivative(u, t, m, l, cache=None):
    V = (u.moments(m) if cache is None else cache.moments)[None, :]
    return float(sum(l[q] * u.phi_t(t, V, q)[0] for q in range(u.n_chain) if l[q] != 0))


def transport_term(u, t, m, l, coeffs, cache=None):
    """``sum_q l(q) sum_i int [b . d_x delta + 1/2 sigma^2 : d_xx delta] m(dx, i)``."""
    cache = atom_derivatives(u, t, m) if cache is None else cache
    total = 0.0
    for q in range(u.n_chain):
        if l[q] == 0:
            continue
        qq = np.full(m.size, q)
        b = coeffs.b(t, qq, m.x, m.modes, m)
        s = coeffs.sig(t, qq, m.x, m.modes, m)
        per_atom = np.sum(b * cache.dx[:, q], axis=1) + 0.5 * np.sum(s**2 * cache.dxx[:, q], axis=1)
        total += l[q] * float(np.dot(m.weights, per_atom))
    return total


def generator_L(u, t, m, l, coeffs, cache=None):
    m = _law(m)
    l = check_chain_law(l, u.n_chain)
    cache = atom_derivatives(u, t, m) if cache is None else cache
    return time_derivative(u, t, m, l, cache) + transport_term(u, t, m, l, coeffs, cache)


def generator_Q(u, t, m, l, rf, cache=None):
    """``sum_p l(p) int sum_{q != p} lambda_pq(x) [delta(y; q) - delta(y; p)] m(dy)``."""
    m = _law(m)
    l = check_chain_law(l, u.n_chain)
    rf = as_rate_function(rf)
    if u.n_chain == 1:
        return 0.0
    cache = atom_derivatives(u, t, m) if cache is None else cache
    lam = rf.pointwise(m.x)
    deltas = cache.value
    total = 0.0
    for p in range(u.n_chain):
        if l[p] == 0:
            continue
        diff = deltas - deltas[:, [p]]
        diff[:, p] = 0.0
        total += l[p] * float(np.dot(m.weights, np.sum(lam[:, p, :] * diff, axis=1)))
    return total


def _atom_options(u, t, m, g, K):
    """Per-atom relabelling options: arrays of (target, p, moment shift, cost, moved mass)."""
    N = m.n_modes
    grid = np.arange(K + 1) / K
    opts = []
    for a in range(m.size):
        xa = m.x[a : a + 1]
        i = m.modes[a]
        w = m.weights[a]
        rows = [(i, 0.0, np.zeros(u.n_moments), 0.0, 0.0)]
        for j in range(N):
            if j == i:
                continue
            shift = np.zeros(u.n_moments)
            for k, (mode, psi) in enumerate(u.basis):
                if mode is None:
                    continue
                val = float(psi(xa)[0])
                shift[k] += w * val * (float(mode == j) - float(mode == i))
            cost = w * float(g(i, j, t, xa)[0])
            for p in grid[1:]:
                rows.append((j, p, p * shift, p * cost, p * w))
        opts.append(rows)
    return opts


def _kernel_from_choice(m, choice):
    K = np.zeros((m.size, m.n_modes))
    for a, (j, p) in enumerate(choice):
        K[a, m.modes[a]] += 1.0 - p
        K[a, j] += p
    return K


def intervention_value(u, t, m, l, g, K=20, refine=True, max_combos=200_000):
    """``M[u] = sup_{m' < m} u(t, m'; l) - sum_i sum_{j != i} int g_ij p_ij m(dx, i)``.

    Searched over per-atom kernels that move a fraction p in {0, 1/K, ..., 1}
    of each atom to a single other mode, jointly over all atoms when the grid
    is small enough and by coordinate ascent otherwise; an optional pass
    refines each atom's fraction on a 1/K**2 grid.  Kernels moving less than
    ``STRICT_MASS`` are excluded.  Returns ``(value, kernel)``.
    """
    m = _law(m)
    l = check_chain_law(l, u.n_chain)
    v0 = u.moments(m)
    opts = _atom_options(u, t, m, g, K)

    def objective(shift, cost, moved):
        val = u.value_moments(t, v0[None, :] + shift, l) - cost
        return np.where(moved >= STRICT_MASS, val, -np.inf)

    n_combos = int(np.prod([len(o) for o in opts], dtype=float))
    if n_combos <= max_combos:
        shift = np.zeros((1, u.n_moments))
        cost = np.zeros(1)
        moved = np.zeros(1)
        for rows in opts:
            s = np.array([r[2] for r in rows])
            c = np.array([r[3] for r in rows])
            mv = np.array([r[4] for r in rows])
            shift = (shift[:, None, :] + s[None, :, :]).reshape(-1, u.n_moments)
            cost = (cost[:, None] + c[None, :]).ravel()
            moved = (moved[:, None] + mv[None, :]).ravel()
        vals = objective(shift, cost, moved)
        best = int(np.argmax(vals))
        idx = np.unravel_index(best, [len(o) for o in opts])
        sel = [int(k) for k in idx]
    else:
        sel = _coordinate_ascent(opts, objective, u.n_moments)

    choice = [(opts[a][k][0], opts[a][k][1]) for a, k in enumerate(sel)]
    state = _totals(opts, sel, u.n_moments)
    best_val = float(objective(*state)[0])

    if refine:
        for a in range(m.size):
            j, p = choice[a]
            targets = [j] if p > 0 else [jj for jj in range(m.n_modes) if jj != m.modes[a]]
            for jj in targets:
                unit = _unit_option(u, t, m, g, a, jj)
                lo, hi = max(p - 1.0 / K, 0.0), min(p + 1.0 / K, 1.0)
                ps = np.arange(lo, hi + 0.5 / K**2, 1.0 / K**2)
                ps = ps[(ps >= 0) & (ps <= 1)]
                cur = opts[a][sel[a]]
                base_shift = state[0] - cur[2]
                base_cost = state[1] - cur[3]
                base_moved = state[2] - cur[4]
                cand = objective(base_shift + ps[:, None] * unit[0], base_cost + ps * unit[1], base_moved + ps * unit[2])
                k = int(np.argmax(cand))
                if cand[k] > best_val:
                    best_val = float(cand[k])
                    new = (jj, float(ps[k]), ps[k] * unit[0], ps[k] * unit[1], ps[k] * unit[2])
                    opts[a] = opts[a] + [new]
                    sel[a] = len(opts[a]) - 1
                    choice[a] = (jj, float(ps[k]))
                    state = _totals(opts, sel, u.n_moments)
    return best_val, _kernel_from_choice(m, choice)


def _unit_option(u, t, m, g, a, j):
    xa = m.x[a : a + 1]
    i = m.modes[a]
    w = m.weights[a]
    shift = np.zeros(u.n_moments)
    for k, (mode, psi) in enumerate(u.basis):
        if mode is not None:
            shift[k] = w * float(psi(xa)[0]) * (float(mode == j) - float(mode == i))
    return shift, w * float(g(i, j, t, xa)[0]), w


def _totals(opts, sel, J):
    shift = np.zeros((1, J))
    cost = np.zeros(1)
    moved = np.zeros(1)
    for a, k in enumerate(sel):
        shift[0] += opts[a][k][2]
        cost[0] += opts[a][k][3]
        moved[0] += opts[a][k][4]
    return shift, cost, moved


def _coordinate_ascent(opts, objective, J, max_sweeps=50):
    # start from the best single-atom move
    sel = [0] * len(opts)
    best = -np.inf
    for a, rows in enumerate(opts):
        for k in range(1, len(rows)):
            trial = sel.copy()
            trial[a] = k
            val = objective(*_totals(opts, trial, J))[0]
            if val > best:
                best, start = val, trial
    sel = start
    for _ in range(max_sweeps):
        improved = False
        for a, rows in enumerate(opts):
            shift, cost, moved = _totals(opts, sel, J)
            cur = rows[sel[a]]
            s = np.array([r[2] for r in rows]) + (shift - cur[2])
            c = np.array([r[3] for r in rows]) + (cost - cur[3])
            mv = np.array([r[4] for r in rows]) + (moved - cur[4])
            vals = objective(s, c, mv)
            k = int(np.argmax(vals))
            if vals[k] > best + 1e-15:
                best, sel[a], improved = vals[k], k, True
        if not improved:
            break
    return sel


@dataclass
class ViResidual:
    diffusion: float
    obstacle_gap: float
    minimum: float
    kink: bool = False

    def as_row(self):
        return [self.diffusion, self.obstacle_gap, self.minimum, int(self.kink)]


def diffusion_residual(u, t, m, l, coeffs, rf):
    """``-(L u + F + Q u)``."""
    return -(generator_L(u, t, m, l, coeffs) + aggregate_F(t, m, l, coeffs) + generator_Q(u, t, m, l, rf))


def vi_residual(u, t, m, l, coeffs, rf, g, K=20, refine=True):
    m = _law(m)
    l = check_chain_law(l, u.n_chain)
    diff = diffusion_residual(u, t, m, l, coeffs, rf)
    mu = intervention_value(u, t, m, l, g, K=K, refine=refine)[0]
    gap = eval_functional(u, t, m, l) - mu
    return ViResidual(diff, gap, min(diff, gap), bool(u.at_kink(t, m)))


class AveragedCoefficients(CoefficientSet):
    """Block-averaged coefficients ``b_bar, sigma_bar^2, f_bar`` of a two-time-scale chain."""

    def __init__(self, base, spec):
        if base.n_chain != spec.size:
            raise ValueError("coefficients must be indexed by the fine chain states")
        self.base = base
        self.spec = spec
        self.weights = np.concatenate(block_stationary(spec))
        self.block = spec.block_index()
        super().__init__(base.drift, base.sigma, base.reward, base.terminal, spec.n_blocks, base.n_modes, base.dim)

    def _average(self, fn, q, *args, square=False):
        q = np.asarray(q)
        out = None
        for s in range(self.spec.size):
            k = self.block[s]
            mask = q == k
            if not np.any(mask):
                continue
            vals = fn(np.full(int(mask.sum()), s), mask, *args)
            vals = vals**2 if square else vals
            if out is None:
                out = np.zeros((q.shape[0],) + vals.shape[1:])
            out[mask] += self.weights[s] * vals
        return out

    def b(self, t, q, x, i, m):
        x = as_points(x, self.dim)
        return self._average(lambda s, mk: self.base.b(t, s, x[mk], i[mk], m), q)

    def sig(self, t, q, x, i, m):
        x = as_points(x, self.dim)
        return np.sqrt(self._average(lambda s, mk: self.base.sig(t, s, x[mk], i[mk], m), q, square=True))

    def f(self, t, q, x, i, m):
        x = as_points(x, self.dim)
        return self._average(lambda s, mk: self.base.f(t, s, x[mk], i[mk], m), q)

    def h(self, q, x, i, m):
        x = as_points(x, self.dim)
        return self._average(lambda s, mk: self.base.h(s, x[mk], i[mk], m), q)


def limit_vi_residual(u, t, m, lbar, spec, coeffs, g, K=20, refine=True):
    """Residual of the limit system: averaged coefficients and the averaged generator on L states."""
    avg = AveragedCoefficients(coeffs, spec)
    return vi_residual(u, t, m, lbar, avg, averaged_generator(spec), g, K=K, refine=refine)


def lifted_mixture(v_family, n_chain, n_modes):
    """``sum_p l(p) sum_i int v^i(t, x; p) m(dx, i)`` as a cylindrical functional.

    v_family maps ``(i, p)`` to ``(TimeFactor, ScalarFunction)``.
    """
    basis, terms = [], []
    for j, ((i, p), (tf, psi)) in enumerate(sorted(v_family.items())):
        basis.append((i, psi))
        coef = np.zeros((n_chain, 2))
        coef[p, 1] = 1.0
        terms.append(Term("poly", j, coef, time=tf))
    return CylindricalFunctional(basis, terms, n_chain, n_modes)


def standard_reduction_check(v_family, m, l, t=0.0):
    """Gap between the lifted functional and the direct mixture formula."""
    m = _law(m)
    n_chain = len(l)
    u = lifted_mixture(v_family, n_chain, m.n_modes)
    lifted = eval_functional(u, t, m, l)
    direct = 0.0
    for (i, p), (tf, psi) in v_family.items():
        sel = m.modes == i
        if np.any(sel):
            direct += l[p] * tf(t) * float(np.dot(m.weights[sel], psi(m.x[sel])))
    return abs(lifted - direct)
