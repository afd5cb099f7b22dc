"""Model coefficients, switching costs and the aggregate reward functionals.

Coefficients are evaluated in vectorised form: ``q`` and ``i`` are integer
arrays over atoms (or particles), ``x`` is (n, d), and ``m`` is the current
:class:`~mfswitch.measure.DiscreteLaw`.  Drift and diffusion return (n, d),
rewards return (n,).  Diffusion is diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._report import Report
from .catalog import ScalarFunction, TimeFactor, as_points
from .chain import check_chain_law
from .measure import DiscreteLaw, check_kernel, check_law, mode_moment


def _table(values, n_chain, n_modes, dim=None):
    """Broadcast a scalar / nested list to shape (n_chain, n_modes[, dim])."""
    arr = np.asarray(values, dtype=float)
    shape = (n_chain, n_modes) if dim is None else (n_chain, n_modes, dim)
    if arr.ndim == 1 and arr.shape[0] == n_chain:
        if dim is None:
            arr = arr[:, None]
        elif dim != n_chain:
            arr = arr[:, None, None]
    elif dim is not None and arr.shape == (n_chain, n_modes):
        arr = arr[:, :, None]
    return np.broadcast_to(arr, shape).copy()


class Coefficient:
    """Base class; subclasses implement ``__call__(t, q, x, i, m)``."""

    vector = True  # drift/diffusion return (n, d); rewards return (n,)

    def to_dict(self):
        raise NotImplementedError


@dataclass
class Constant(Coefficient):
    value: object = 0.0
    n_chain: int = 1
    n_modes: int = 2
    dim: int = 1
    vector: bool = True

    def __post_init__(self):
        self.table = _table(self.value, self.n_chain, self.n_modes, self.dim if self.vector else None)

    def __call__(self, t, q, x, i, m=None):
        return self.table[q, i]

    def to_dict(self):
        return {"kind": "constant", "value": self.table.tolist()}


@dataclass
class Affine(Coefficient):
    """``slope[q, i] * x + intercept[q, i]`` (componentwise for vector coefficients)."""

    slope: object = 0.0
    intercept: object = 0.0
    n_chain: int = 1
    n_modes: int = 2
    dim: int = 1
    vector: bool = True

    def __post_init__(self):
        d = self.dim if self.vector else None
        self.a = _table(self.slope, self.n_chain, self.n_modes, d)
        self.b = _table(self.intercept, self.n_chain, self.n_modes, d)

    def __call__(self, t, q, x, i, m=None):
        x = as_points(x, self.dim)
        if self.vector:
            return self.a[q, i] * x + self.b[q, i]
        return self.a[q, i] * x[:, 0] + self.b[q, i]

    def to_dict(self):
        return {"kind": "affine", "slope": self.a.tolist(), "intercept": self.b.tolist()}


@dataclass
class PointFunction(Coefficient):
    """``scale[q, i] * psi(x)``; scalar-valued only (rewards)."""

    psi: ScalarFunction = field(default_factory=lambda: ScalarFunction("constant", (1.0,)))
    scale: object = 1.0
    n_chain: int = 1
    n_modes: int = 2
    vector: bool = False

    def __post_init__(self):
        self.s = _table(self.scale, self.n_chain, self.n_modes)

    def __call__(self, t, q, x, i, m=None):
        return self.s[q, i] * self.psi(x)

    def to_dict(self):
        return {"kind": "point", "psi": self.psi.to_dict(), "scale": self.s.tolist()}


@dataclass
class MeanFieldAffine(Coefficient):
    """``slope*x + intercept + coupling * <psi, m(., moment_mode)>``.

    ``moment_mode=None`` integrates psi against the x-marginal of m.
    """

    slope: object = 0.0
    intercept: object = 0.0
    coupling: object = 0.0
    psi: ScalarFunction = field(default_factory=lambda: ScalarFunction("affine", (1.0, 0.0)))
    moment_mode: object = None
    n_chain: int = 1
    n_modes: int = 2
    dim: int = 1
    vector: bool = True

    def __post_init__(self):
        d = self.dim if self.vector else None
        self.a = _table(self.slope, self.n_chain, self.n_modes, d)
        self.b = _table(self.intercept, self.n_chain, self.n_modes, d)
        self.c = _table(self.coupling, self.n_chain, self.n_modes, d)

    def moment(self, m):
        if self.moment_mode is None:
            return float(np.dot(m.weights, self.psi(m.x)))
        return mode_moment(m, int(self.moment_mode), self.psi)

    def __call__(self, t, q, x, i, m):
        x = as_points(x, self.dim)
        v = self.moment(m)
        if self.vector:
            return self.a[q, i] * x + self.b[q, i] + self.c[q, i] * v
        return self.a[q, i] * x[:, 0] + self.b[q, i] + self.c[q, i] * v

    def to_dict(self):
        return {
            "kind": "mean_field_affine",
            "slope": self.a.tolist(),
            "intercept": self.b.tolist(),
            "coupling": self.c.tolist(),
            "psi": self.psi.to_dict(),
            "moment_mode": self.moment_mode,
        }


@dataclass
class TradingReward(Coefficient):
    """Holding reward of the long/short trading family, constant in (x, i).

    Integrated against m it gives, per chain state q,
    ``a1[q] + a0[q] + sign * (|v1 - a1[q]| + |v0 - a0[q]|)`` with
    ``v_i = <psi, m(., i)>``.  ``sign=-1`` makes the candidate value
    ``(T - t) sum_q l(q) (v1 ^ a1[q] + v0 ^ a0[q])`` satisfy the drift
    inequality with residual ``sum_q l(q) ([v1 - a1]^+ + [v0 - a0]^+)``.
    ``sign=+1`` is the alternative sign convention.
    """

    psi: ScalarFunction = field(default_factory=lambda: ScalarFunction("affine", (1.0, 0.0)))
    a1: object = 1.0
    a0: object = 1.0
    sign: float = -1.0
    vector: bool = False

    def __post_init__(self):
        self.a1 = np.atleast_1d(np.asarray(self.a1, dtype=float))
        self.a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))

    def per_state(self, m):
        v1 = mode_moment(m, 1, self.psi)
        v0 = mode_moment(m, 0, self.psi)
        return self.a1 + self.a0 + self.sign * (np.abs(v1 - self.a1) + np.abs(v0 - self.a0))

    def __call__(self, t, q, x, i, m):
        return self.per_state(m)[np.asarray(q)] * np.ones(as_points(x).shape[0])

    def to_dict(self):
        return {
            "kind": "trading",
            "psi": self.psi.to_dict(),
            "a1": self.a1.tolist(),
            "a0": self.a0.tolist(),
            "sign": self.sign,
        }


@dataclass
class CoefficientSet:
    """Drift ``b``, diagonal diffusion ``sigma``, running reward ``f`` and terminal reward ``h``."""

    drift: Coefficient
    sigma: Coefficient
    reward: Coefficient
    terminal: Coefficient
    n_chain: int = 1
    n_modes: int = 2
    dim: int = 1

    def b(self, t, q, x, i, m):
        return np.broadcast_to(self.drift(t, q, x, i, m), (len(i), self.dim))

    def sig(self, t, q, x, i, m):
        return np.broadcast_to(self.sigma(t, q, x, i, m), (len(i), self.dim))

    def f(self, t, q, x, i, m):
        return np.broadcast_to(self.reward(t, q, x, i, m), (len(i),))

    def h(self, q, x, i, m):
        return np.broadcast_to(self.terminal(None, q, x, i, m), (len(i),))

    @classmethod
    def zero(cls, n_chain=1, n_modes=2, dim=1):
        z = dict(n_chain=n_chain, n_modes=n_modes)
        return cls(
            Constant(0.0, dim=dim, **z),
            Constant(0.0, dim=dim, **z),
            Constant(0.0, vector=False, **z),
            Constant(0.0, vector=False, **z),
            n_chain,
            n_modes,
            dim,
        )

    def to_dict(self):
        return {
            "n_chain": self.n_chain,
            "n_modes": self.n_modes,
            "dim": self.dim,
            "drift": self.drift.to_dict(),
            "sigma": self.sigma.to_dict(),
            "reward": self.reward.to_dict(),
            "terminal": self.terminal.to_dict(),
        }

    def check(self, m, t=0.0):
        """Finite coefficients and nonnegative diffusion at every atom and chain state."""
        for q in range(self.n_chain):
            qq = np.full(m.size, q)
            s = self.sig(t, qq, m.x, m.modes, m)
            if np.any(s < 0):
                return Report.fail(f"negative diffusion at chain state {q}")
            for name, val in (
                ("drift", self.b(t, qq, m.x, m.modes, m)),
                ("reward", self.f(t, qq, m.x, m.modes, m)),
                ("terminal", self.h(qq, m.x, m.modes, m)),
            ):
                if not np.all(np.isfinite(val)):
                    return Report.fail(f"non-finite {name} at chain state {q}")
        return Report.ok()


def _integrate_over_chain(values_for_q, l):
    return float(sum(l[q] * values_for_q(q) for q in range(len(l)) if l[q] != 0))


def aggregate_F(t, m, l, coeffs):
    """``sum_q l(q) int f(t, q, y, m) m(dy)``."""
    m = check_law(m)
    l = check_chain_law(l, coeffs.n_chain)
    return _integrate_over_chain(
        lambda q: np.dot(m.weights, coeffs.f(t, np.full(m.size, q), m.x, m.modes, m)), l
    )


def aggregate_H(m, l, coeffs, xmarginal=False):
    """``sum_q l(q) int h(q, y, m) m(dy)``.

    With ``xmarginal=True`` the measure argument passed to h is the
    x-marginal (all mass relabelled to mode 0) instead of the full law.
    """
    m = check_law(m)
    l = check_chain_law(l, coeffs.n_chain)
    arg = DiscreteLaw(m.x, np.zeros(m.size, dtype=int), m.weights, m.n_modes) if xmarginal else m
    return _integrate_over_chain(lambda q: np.dot(m.weights, coeffs.h(np.full(m.size, q), m.x, m.modes, arg)), l)


@dataclass(frozen=True)
class SwitchCost:
    """``g_ij(t, x) = tau(t) * psi(x)``; ``psi=None`` means psi = 1."""

    time: TimeFactor = field(default_factory=TimeFactor)
    psi: ScalarFunction | None = None

    def __call__(self, t, x):
        base = np.ones(as_points(x).shape[0]) if self.psi is None else self.psi(x)
        return self.time(t) * base

    def to_dict(self):
        return {"time": self.time.to_dict(), "psi": None if self.psi is None else self.psi.to_dict()}

    @classmethod
    def from_dict(cls, d):
        psi = d.get("psi")
        return cls(TimeFactor.from_dict(d.get("time", {})), None if psi is None else ScalarFunction.from_dict(psi))


@dataclass
class CostMatrix:
    """Switching costs ``g_ij`` for i != j; ``g_ii = 0`` identically and cannot be set."""

    n_modes: int
    entries: dict

    def __post_init__(self):
        for (i, j) in self.entries:
            if i == j:
                raise ValueError("diagonal switching costs are fixed at zero")
            if not (0 <= i < self.n_modes and 0 <= j < self.n_modes):
                raise ValueError(f"cost index {(i, j)} outside the mode set")

    def __call__(self, i, j, t, x):
        if i == j:
            return np.zeros(as_points(x).shape[0])
        fn = self.entries.get((i, j))
        if fn is None:
            raise KeyError(f"no switching cost declared for {i}->{j}")
        return fn(t, x)

    def table(self, t, x):
        """All costs at points x, shape (n, N, N)."""
        n = as_points(x).shape[0]
        out = np.zeros((n, self.n_modes, self.n_modes))
        for (i, j), fn in self.entries.items():
            out[:, i, j] = fn(t, x)
        return out

    @classmethod
    def constant(cls, c, n_modes=2):
        c = np.broadcast_to(np.asarray(c, float), (n_modes, n_modes))
        return cls(
            n_modes,
            {(i, j): SwitchCost(TimeFactor("constant", float(c[i, j]))) for i in range(n_modes) for j in range(n_modes) if i != j},
        )

    @classmethod
    def trading(cls, horizon, psi):
        """``g_10 = g_01 = (T - t) psi(x)``."""
        g = SwitchCost(TimeFactor("remaining", 1.0, horizon), psi)
        return cls(2, {(1, 0): g, (0, 1): g})

    def to_dict(self):
        return {
            "n_modes": self.n_modes,
            "entries": [{"from": i, "to": j, **fn.to_dict()} for (i, j), fn in sorted(self.entries.items())],
        }


def default_time_grid(horizon, n=11):
    """``n`` points on [0, T); switching exactly at T is not allowed."""
    return np.linspace(0.0, horizon, n, endpoint=False)


def validate_costs(g, t_grid, x_sample):
    """Zero diagonal and strict ``g_ij + g_jk > g_ik`` for j not in {i, k} on the sampled grid."""
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    x_sample = as_points(x_sample)
    if t_grid.size == 0 or x_sample.shape[0] == 0:
        raise ValueError("validation grids must be nonempty")
    N = g.n_modes
    for t in t_grid:
        tab = g.table(t, x_sample)
        if np.any(tab < 0):
            idx = np.argwhere(tab < 0)[0]
            return Report.fail(f"negative cost g_{idx[1]}{idx[2]} at t={t!r}, x={x_sample[idx[0]].tolist()}")
        for i in range(N):
            for k in range(N):
                for j in range(N):
                    if j in (i, k):
                        continue
                    lhs = tab[:, i, j] + tab[:, j, k]
                    rhs = tab[:, i, k]
                    bad = np.flatnonzero(~(lhs > rhs))
                    if bad.size:
                        n = bad[0]
                        return Report.fail(
                            f"triangle violated for (i,j,k)=({i},{j},{k}) at t={t!r}, x={x_sample[n].tolist()}: "
                            f"{lhs[n]!r} <= {rhs[n]!r}"
                        )
    return Report.ok()


def switch_cost(m, K, t, g):
    """``sum over atoms and targets j of w * p_ij * g_ij(t, x)``."""
    K = check_kernel(m, K)
    tab = g.table(t, m.x)
    per_atom = tab[np.arange(m.size), m.modes, :]
    return float(np.sum(m.weights[:, None] * K * per_atom))


@dataclass
class SwitchRecord:
    """Law-level description of the n-th switch.

    prior : (N,) weights of the previous mode; conditionals[i] is a law over
    (x, new mode j) given previous mode i (None when prior[i] == 0).
    """

    n: int
    prior: np.ndarray
    conditionals: list

    def __post_init__(self):
        self.prior = check_chain_law(self.prior)
        for i, c in enumerate(self.conditionals):
            if self.prior[i] > 0:
                check_law(c)


def switch_record_from_kernel(m, K, n=1):
    K = check_kernel(m, K)
    N = m.n_modes
    prior = m.mode_masses()
    conds = []
    for i in range(N):
        sel = np.flatnonzero(m.modes == i)
        if prior[i] <= 0:
            conds.append(None)
            continue
        x = np.repeat(m.x[sel], N, axis=0)
        modes = np.tile(np.arange(N), sel.size)
        w = (m.weights[sel, None] / prior[i] * K[sel]).ravel()
        conds.append(DiscreteLaw(x, modes, w, N))
    return SwitchRecord(n, prior, conds)


def aggregate_G(t, rec, g):
    """``sum_i sum_j int g_ij(t, x) m^i(dx, j) P(xi_{n-1} = i)``."""
    total = 0.0
    for i, cond in enumerate(rec.conditionals):
        if cond is None or rec.prior[i] == 0:
            continue
        tab = g.table(t, cond.x)
        total += rec.prior[i] * float(np.dot(cond.weights, tab[np.arange(cond.size), i, cond.modes]))
    return total
