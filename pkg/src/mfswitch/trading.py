"""Long/short trading examples with closed-form value candidates.

The candidate is ``u(t, m; l) = (T - t) sum_q l(q) (v1 ^ a1[q] + v0 ^ a0[q])``
with ``v_i = <psi, m(., i)>``; mode 1 is the long position and mode 0 the
short one.  Chain state q indexes the market regime; in the four-state case
``q = 2 * (q1 - 1) + (q2 - 1)`` with slow trend q1 and fast indicator q2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import ScalarFunction, TimeFactor, identity
from .chain import RateFunction, TwoScaleSpec, averaged_generator, build_epsilon_generator, check_chain_law, check_generator
from .functional import CylindricalFunctional, Term, ViResidual
from .measure import DiscreteLaw, check_law, mode_moment
from .model import CoefficientSet, Constant, CostMatrix, TradingReward

LONG, SHORT = 1, 0


class ReductionError(ValueError):
    """Thresholds are not block-constant and no collapsing rule was given."""


def two_state_generator(mu1, mu2):
    return np.array([[-mu1, mu1], [mu2, -mu2]], dtype=float)


@dataclass
class TradingExampleSpec:
    """Thresholds ``a1[q]`` (take profit on long) and ``a0[q]`` (cover short) per chain state.

    Exactly one of ``generator`` (two-state chain) or ``two_scale`` (four-state
    chain) is used for the market dynamics.  ``domain`` is the x-range on
    which psi must be positive.
    """

    horizon: float
    a1: object
    a0: object
    psi: ScalarFunction = field(default_factory=identity)
    generator: object = None
    two_scale: TwoScaleSpec | None = None
    domain: tuple = (1e-6, 1e3)
    check_ordering: bool = True

    def __post_init__(self):
        self.a1 = np.asarray(self.a1, dtype=float).ravel()
        self.a0 = np.asarray(self.a0, dtype=float).ravel()
        if self.a1.shape != self.a0.shape:
            raise ValueError("a1 and a0 need one entry per chain state")
        if not (np.all(self.a1 > 0) and np.all(self.a0 > 0)):
            raise ValueError("thresholds must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.two_scale is not None:
            if self.two_scale.size != self.n_chain:
                raise ValueError("threshold count does not match the four-state chain")
        else:
            if self.generator is None:
                self.generator = np.zeros((self.n_chain, self.n_chain))
            self.generator = check_generator(self.generator)
            if self.generator.shape[0] != self.n_chain:
                raise ValueError("threshold count does not match the generator")
        grid = np.linspace(self.domain[0], self.domain[1], 201)
        if np.any(self.psi(grid) <= 0):
            raise ValueError("psi must be positive on the configured domain")
        if self.check_ordering:
            self._check_ordering()

    def _check_ordering(self):
        d1, d0 = np.diff(self.a1), np.diff(self.a0)
        if self.n_chain == 2:
            ok = d1[0] > 0 and d0[0] < 0
            rule = "a1(2) > a1(1) and a0(2) < a0(1)"
        else:
            ok = np.all(d1 >= 0) and np.all(d0 <= 0)
            rule = "a1 non-decreasing and a0 non-increasing over q"
        if not ok:
            raise ValueError(f"threshold ordering violated: need {rule}")

    @property
    def n_chain(self):
        return self.a1.size

    @classmethod
    def two_state(cls, horizon, a1, a0, mu1=0.0, mu2=0.0, psi=None, **kw):
        return cls(horizon, a1, a0, psi or identity(), generator=two_state_generator(mu1, mu2), **kw)

    @classmethod
    def four_state(cls, horizon, a1, a0, lam1, lam2, mu1, mu2, epsilon=1.0, psi=None, **kw):
        spec = TwoScaleSpec.trading(lam1, lam2, mu1, mu2, epsilon)
        return cls(horizon, a1, a0, psi or identity(), two_scale=spec, **kw)

    def chain_generator(self):
        if self.two_scale is not None:
            return build_epsilon_generator(self.two_scale)
        return self.generator

    def rate_function(self):
        return RateFunction.constant(self.chain_generator())

    def candidate(self):
        tf = TimeFactor("remaining", 1.0, self.horizon)
        ones = np.ones(self.n_chain)
        return CylindricalFunctional(
            [(LONG, self.psi), (SHORT, self.psi)],
            [Term("min", 0, ones, self.a1, time=tf), Term("min", 1, ones, self.a0, time=tf)],
            n_chain=self.n_chain,
            n_modes=2,
        )

    def coefficients(self, drift=0.0, sigma=0.0, sign=-1.0):
        """Constant drift/diffusion, trading reward, zero terminal reward."""
        z = dict(n_chain=self.n_chain, n_modes=2)
        return CoefficientSet(
            Constant(drift, **z),
            Constant(sigma, **z),
            TradingReward(self.psi, self.a1, self.a0, sign),
            Constant(0.0, vector=False, **z),
            self.n_chain,
            2,
            1,
        )

    def costs(self):
        return CostMatrix.trading(self.horizon, self.psi)

    def moments(self, m):
        return mode_moment(m, LONG, self.psi), mode_moment(m, SHORT, self.psi)

    def check_support(self, m):
        if m.size and np.any(self.psi(m.x) <= 0):
            raise ValueError("psi must be positive at every atom")

    def to_dict(self):
        d = {
            "horizon": self.horizon,
            "a1": self.a1.tolist(),
            "a0": self.a0.tolist(),
            "psi": self.psi.to_dict(),
        }
        if self.two_scale is not None:
            d["chain"] = "two_scale"
        else:
            d["generator"] = self.generator.tolist()
        return d


def _weights(spec, l):
    return check_chain_law(l, spec.n_chain)


def example_value(spec, t, m, l):
    """Closed-form candidate value."""
    m = check_law(m)
    l = _weights(spec, l)
    v1, v0 = spec.moments(m)
    per_q = np.minimum(v1, spec.a1) + np.minimum(v0, spec.a0)
    return float((spec.horizon - t) * np.dot(l, per_q))


def closed_form_diffusion(spec, v1, v0, l):
    """``sum_q l(q) ([v1 - a1(q)]^+ + [v0 - a0(q)]^+)``."""
    return float(np.dot(l, np.maximum(v1 - spec.a1, 0.0) + np.maximum(v0 - spec.a0, 0.0)))


def _move_objective(spec, v1, v0, l, x):
    """Candidate / (T - t) after moving psi-mass x from long to short (x < 0: short to long), minus cost."""
    w1 = v1 - x
    w0 = v0 + x
    return float(np.dot(l, np.minimum(w1, spec.a1) + np.minimum(w0, spec.a0))) - abs(x)


def closed_form_intervention(spec, v1, v0, l):
    """``M[u] / (T - t)``: the objective is concave piecewise linear in the moved mass,
    so the supremum over moves is attained at a breakpoint, an endpoint, or
    approached as the move shrinks to zero."""
    cands = {0.0, v1, -v0}
    for q in range(spec.n_chain):
        cands.update({v1 - spec.a1[q], spec.a0[q] - v0})
    best = -np.inf
    for x in cands:
        if -v0 <= x <= v1:
            best = max(best, _move_objective(spec, v1, v0, l, x))
    return best


def example_residual(spec, t, m, l):
    """Closed-form residual pair: diffusion part and obstacle gap."""
    m = check_law(m)
    spec.check_support(m)
    l = _weights(spec, l)
    if not t < spec.horizon:
        raise ValueError("residual needs t < T")
    v1, v0 = spec.moments(m)
    diff = closed_form_diffusion(spec, v1, v0, l)
    tau = spec.horizon - t
    u = float(np.dot(l, np.minimum(v1, spec.a1) + np.minimum(v0, spec.a0)))
    gap = tau * (u - closed_form_intervention(spec, v1, v0, l))
    return ViResidual(diff, gap, min(diff, gap), False)


def cancellation_defect(spec, t, m, l, coeffs):
    """Transport plus chain-jump terms of the candidate for constant drift/diffusion and constant rates.

    The closed-form residual assumes this vanishes; in general
    ``diffusion residual + defect = closed-form residual``.
    """
    m = check_law(m)
    l = _weights(spec, l)
    G = spec.chain_generator()
    v1, v0 = spec.moments(m)
    tau = spec.horizon - t
    on1 = (v1 <= spec.a1).astype(float)
    on0 = (v0 <= spec.a0).astype(float)
    transport = 0.0
    for q in range(spec.n_chain):
        if l[q] == 0:
            continue
        for mode, on in ((LONG, on1[q]), (SHORT, on0[q])):
            sel = m.modes == mode
            if not on or not np.any(sel):
                continue
            qq = np.full(int(sel.sum()), q)
            b = coeffs.b(t, qq, m.x[sel], m.modes[sel], m)[:, 0]
            s = coeffs.sig(t, qq, m.x[sel], m.modes[sel], m)[:, 0]
            gen = b * spec.psi.d1(m.x[sel]) + 0.5 * s**2 * spec.psi.d2(m.x[sel])
            transport += l[q] * float(np.dot(m.weights[sel], gen))
    slope = on1 * v1 + on0 * v0
    jump = float(l @ (G @ slope))
    return tau * (transport + jump)


@dataclass
class ModeAction:
    q: int
    weight: float
    long: str
    short: str
    long_target: float | None
    short_target: float | None


def _action(spec, v1, v0, q, weight):
    out1 = v1 > spec.a1[q]
    out0 = v0 > spec.a0[q]
    return ModeAction(
        q,
        float(weight),
        "switch-out" if out1 else "keep",
        "switch-out" if out0 else "keep",
        float(spec.a1[q]) if out1 else None,
        float(spec.a0[q]) if out0 else None,
    )


def classify_action(spec, m, l):
    """Per chain state actions; ``l`` is a chain law or an integer chain state."""
    m = check_law(m)
    if isinstance(l, (int, np.integer)):
        l = np.eye(spec.n_chain)[int(l)]
    l = _weights(spec, l)
    v1, v0 = spec.moments(m)
    return [_action(spec, v1, v0, q, l[q]) for q in range(spec.n_chain) if l[q] > 0]


def target_kernel(spec, m, q):
    """Kernel moving a uniform fraction of each switched-out mode so that its psi-moment lands on the threshold."""
    m = check_law(m)
    v1, v0 = spec.moments(m)
    K = np.zeros((m.size, 2))
    K[np.arange(m.size), m.modes] = 1.0
    for mode, v, a in ((LONG, v1, spec.a1[q]), (SHORT, v0, spec.a0[q])):
        if v > a:
            p = (v - a) / v
            sel = m.modes == mode
            K[sel, mode] = 1.0 - p
            K[sel, 1 - mode] = p
    return K


@dataclass
class StrategyTable:
    """Actions on a moment grid; ``long_set[q, a, b]`` marks being long at (v1[a], v0[b])."""

    v1: np.ndarray
    v0: np.ndarray
    long_action: np.ndarray
    short_action: np.ndarray
    boundaries: list

    @property
    def long_set(self):
        return (self.long_action == 0) | (self.short_action == 1)

    def rows(self):
        names = ("keep", "switch-out")
        out = []
        for q in range(self.long_action.shape[0]):
            for a, x1 in enumerate(self.v1):
                for b, x0 in enumerate(self.v0):
                    act = f"long:{names[self.long_action[q, a, b]]};short:{names[self.short_action[q, a, b]]}"
                    out.append([x1, x0, q, act, int(self.long_set[q, a, b])])
        return out

    def nesting_violations(self, order=None):
        """Count grid cells where the long set shrinks along the given chain-state order."""
        order = np.arange(self.long_action.shape[0]) if order is None else np.asarray(order)
        L = self.long_set[order]
        return int(np.sum(L[:-1] & ~L[1:]))


def strategy_table(spec, v1_grid, v0_grid):
    v1 = np.asarray(v1_grid, dtype=float)
    v0 = np.asarray(v0_grid, dtype=float)
    long_act = (v1[None, :, None] > spec.a1[:, None, None]).astype(np.int8)
    short_act = (v0[None, None, :] > spec.a0[:, None, None]).astype(np.int8)
    long_act = np.broadcast_to(long_act, (spec.n_chain, v1.size, v0.size)).copy()
    short_act = np.broadcast_to(short_act, (spec.n_chain, v1.size, v0.size)).copy()
    bounds = [{"q": q, "a1": float(spec.a1[q]), "a0": float(spec.a0[q])} for q in range(spec.n_chain)]
    return StrategyTable(v1, v0, long_act, short_act, bounds)


def threshold_order(spec):
    """Chain states sorted by increasing a1 then decreasing a0."""
    return np.lexsort((-spec.a0, spec.a1))


COLLAPSE_RULES = ("lower", "upper", "mean")


def limit_reduction(spec, collapse=None):
    """Two-state spec obtained as the fast scale goes to zero."""
    if spec.two_scale is None:
        raise ValueError("limit_reduction needs a four-state two-scale spec")
    ts = spec.two_scale
    blocks = ts.block_index()
    a1, a0 = [], []
    for k in range(ts.n_blocks):
        b1 = spec.a1[blocks == k]
        b0 = spec.a0[blocks == k]
        if np.all(b1 == b1[0]) and np.all(b0 == b0[0]):
            a1.append(b1[0])
            a0.append(b0[0])
        elif collapse is None:
            raise ReductionError(f"thresholds are not constant on block {k}")
        elif collapse == "lower":
            a1.append(b1.min())
            a0.append(b0.min())
        elif collapse == "upper":
            a1.append(b1.max())
            a0.append(b0.max())
        elif collapse == "mean":
            a1.append(b1.mean())
            a0.append(b0.mean())
        else:
            raise ValueError(f"unknown collapsing rule {collapse!r}")
    return TradingExampleSpec(
        spec.horizon, a1, a0, spec.psi, generator=averaged_generator(ts), domain=spec.domain,
        check_ordering=False,
    )
