"""Interacting-particle simulation of regime-switching mean-field dynamics with switching.

Each particle carries a position ``x``, a mode ``i`` and its own copy of the
market chain ``alpha``.  One step of length ``dt`` does, in order:

1. apply the switching policy if the step starts at a policy time,
2. freeze the empirical snapshot ``(m^N, l^N)``,
3. move every chain copy with the law-coupled rates ``lambda(m^N)``,
4. take an Euler-Maruyama step with coefficients at the step-start state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import ScalarFunction, as_points
from .chain import as_rate_function, check_chain_law, check_step, extended_rates, step_states
from .measure import DiscreteLaw, check_law

POLICY_KINDS = ("none", "threshold", "kernel")
GRID_TOL = 1e-9


class PolicyGridError(ValueError):
    """Policy times are not on the simulation grid or hit the horizon."""


@dataclass
class SwitchPolicy:
    """Mode-relabelling rule applied at a finite set of times.

    kind "none"      : never switch.
    kind "threshold" : a particle in mode i and chain state q moves to
                       ``targets[i]`` with probability
                       ``(v_i - a[i, q]) / v_i`` when ``v_i = <psi, m(., i)> > a[i, q]``,
                       so that the expected remaining moment is ``a[i, q]``.
    kind "kernel"    : ``kernels[k]`` is an (N, N) row-stochastic matrix of
                       mode-to-mode probabilities used at ``times[k]``.
    """

    kind: str = "none"
    times: object = ()
    psi: ScalarFunction | None = None
    thresholds: object = None
    targets: object = None
    kernels: object = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.kind == "none":
            self.times = np.zeros(0)
        elif self.kind == "threshold":
            if self.psi is None or self.thresholds is None:
                raise ValueError("threshold policy needs psi and thresholds")
            self.thresholds = np.atleast_2d(np.asarray(self.thresholds, dtype=float))
            n = self.thresholds.shape[0]
            self.targets = np.asarray(self.targets if self.targets is not None else np.arange(n)[::-1], dtype=np.int64)
        else:
            self.kernels = [np.asarray(k, dtype=float) for k in self.kernels]
            if len(self.kernels) != self.times.size:
                raise ValueError("one kernel per policy time is required")
            for K in self.kernels:
                if K.ndim != 2 or K.shape[0] != K.shape[1] or np.any(K < 0) or np.any(np.abs(K.sum(axis=1) - 1) > 1e-12):
                    raise ValueError("policy kernels must be square and row-stochastic")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def forced(cls, time, kernel):
        return cls("kernel", [time], kernels=[kernel])

    def step_indices(self, t0, dt, n_steps, horizon):
        """Map policy times to step indices; raises PolicyGridError on mismatch."""
        out = {}
        for k, t in enumerate(self.times):
            if t >= horizon - GRID_TOL * dt:
                raise PolicyGridError(f"no intervention allowed at or after the horizon (t={t!r})")
            pos = (t - t0) / dt
            idx = int(round(pos))
            if abs(pos - idx) > GRID_TOL or idx < 0 or idx >= n_steps:
                raise PolicyGridError(f"policy time {t!r} is not on the simulation grid")
            out[idx] = k
        return out

    def targets_for(self, k, m, x, modes, alpha, rng):
        """New modes for all particles at the k-th policy time."""
        N = modes.shape[0]
        u = rng.random(N)
        new = modes.copy()
        if self.kind == "kernel":
            cum = np.cumsum(self.kernels[k], axis=1)
            cum[:, -1] = 1.0
            return (u[:, None] > cum[modes]).sum(axis=1)
        vals = self.psi(x)
        for i in range(self.thresholds.shape[0]):
            sel = modes == i
            if not np.any(sel):
                continue
            v = float(np.sum(vals[sel])) / N
            if v <= 0:
                continue
            a = self.thresholds[i, alpha[sel]]
            p = np.clip((v - a) / v, 0.0, 1.0)
            flip = u[sel] < p
            idx = np.flatnonzero(sel)[flip]
            new[idx] = self.targets[i]
        return new

    def to_dict(self):
        d = {"kind": self.kind, "times": self.times.tolist()}
        if self.kind == "threshold":
            d.update(psi=self.psi.to_dict(), thresholds=self.thresholds.tolist(), targets=self.targets.tolist())
        elif self.kind == "kernel":
            d["kernels"] = [k.tolist() for k in self.kernels]
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "none")
        if kind == "threshold":
            return cls(kind, d["times"], ScalarFunction.from_dict(d["psi"]), d["thresholds"], d.get("targets"))
        if kind == "kernel":
            return cls(kind, d["times"], kernels=d["kernels"])
        return cls("none")


@dataclass
class SwitchEvent:
    time: float
    particle: int
    source: int
    target: int
    x: np.ndarray
    cost: float


@dataclass
class EnsembleFlow:
    """Recorded particle states; row k is the state at ``times[k]`` after any intervention.

    ``alpha[k]`` is the chain state used for the step starting at ``times[k]``.
    ``pre_modes`` maps a recorded row index to the modes just before the
    intervention at that time.
    """

    times: np.ndarray
    x: np.ndarray
    modes: np.ndarray
    alpha: np.ndarray
    events: list
    pre_modes: dict
    seed: int
    dt: float
    horizon: float
    n_chain: int
    n_modes: int
    record_every: int = 1
    costs: np.ndarray = None

    @property
    def n_particles(self):
        return self.x.shape[1]

    @property
    def dim(self):
        return self.x.shape[2]

    def law(self, k, before=False):
        modes = self.pre_modes[k] if before and k in self.pre_modes else self.modes[k]
        N = self.n_particles
        return DiscreteLaw(self.x[k], modes, np.full(N, 1.0 / N), self.n_modes)

    def chain_law(self, k):
        return np.bincount(self.alpha[k], minlength=self.n_chain) / self.n_particles

    def snapshot_rows(self):
        """Rows ``(t, particle, x..., mode, chain state)``."""
        K, N, d = self.x.shape
        rows = []
        for k in range(K):
            for n in range(N):
                rows.append([self.times[k], n, *self.x[k, n].tolist(), int(self.modes[k, n]), int(self.alpha[k, n])])
        return rows

    def event_rows(self):
        return [[e.time, e.particle, e.source, e.target, *np.atleast_1d(e.x).tolist(), e.cost] for e in self.events]


def _sample_initial(m0, N, rng, initial):
    if initial == "atoms":
        counts = m0.weights * N
        if np.any(np.abs(counts - np.round(counts)) > 1e-9):
            raise ValueError("initial='atoms' needs N * weights to be integers")
        idx = np.repeat(np.arange(m0.size), np.round(counts).astype(np.int64))
    elif initial == "sample":
        idx = rng.choice(m0.size, size=N, p=m0.weights / m0.weights.sum())
    else:
        raise ValueError(f"unknown initial sampling {initial!r}")
    return m0.x[idx].copy(), m0.modes[idx].copy()


def _empirical(x, modes, n_modes):
    N = modes.shape[0]
    return DiscreteLaw(x, modes, np.full(N, 1.0 / N), n_modes)


def simulate(coeffs, rf, g, policy, m0, l0, N, dt, horizon, seed, t0=0.0,
             record_every=1, observer=None, initial="sample"):
    """Simulate N particles on ``[t0, horizon]`` and return an EnsembleFlow.

    Streams for initial sampling, the chain, the noise and the policy are
    spawned from ``seed`` (PCG64), so a run is reproducible bit for bit.
    ``observer``, if given, receives ``start``, ``intervention``, ``step`` and
    ``end`` callbacks with the empirical laws (see ``verify.ItoAccumulator``).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if int(N) < 1:
        raise ValueError("N must be at least 1")
    N = int(N)
    m0 = check_law(m0)
    rf = as_rate_function(rf)
    M = rf.n_states
    l0 = check_chain_law(l0, M)
    span = horizon - t0
    n_steps = int(round(span / dt))
    if n_steps < 1 or abs(n_steps * dt - span) > GRID_TOL * max(1.0, span):
        raise ValueError("horizon - t0 must be a positive multiple of dt")
    policy = policy if policy is not None else SwitchPolicy.none()
    at = policy.step_indices(t0, dt, n_steps, horizon)

    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(4)]
    init_rng, chain_rng, noise_rng, policy_rng = streams
    x, modes = _sample_initial(m0, N, init_rng, initial)
    alpha = init_rng.choice(M, size=N, p=l0)
    d = x.shape[1]

    rec_t, rec_x, rec_i, rec_a = [], [], [], []
    pre_modes, events = {}, []
    costs = np.zeros(N)

    def record(t, pre=None):
        if pre is not None:
            pre_modes[len(rec_t)] = pre
        rec_t.append(t)
        rec_x.append(x.copy())
        rec_i.append(modes.copy())
        rec_a.append(alpha.copy())

    if observer is not None:
        observer.start(t0, _empirical(x, modes, m0.n_modes), np.bincount(alpha, minlength=M) / N)

    for k in range(n_steps):
        t = t0 + k * dt
        pre = None
        if k in at:
            snap = _empirical(x, modes, m0.n_modes)
            new = policy.targets_for(at[k], snap, x, modes, alpha, policy_rng)
            moved = np.flatnonzero(new != modes)
            for n in moved:
                c = float(g(int(modes[n]), int(new[n]), t, x[n : n + 1])[0])
                costs[n] += c
                events.append(SwitchEvent(t, int(n), int(modes[n]), int(new[n]), x[n].copy(), c))
            pre = modes.copy()
            modes = new
            if observer is not None:
                lN = np.bincount(alpha, minlength=M) / N
                observer.intervention(t, snap, lN, _empirical(x, modes, m0.n_modes), lN)
        m = _empirical(x, modes, m0.n_modes)
        lN = np.bincount(alpha, minlength=M) / N
        if k % record_every == 0:
            record(t, pre)
        elif pre is not None:
            raise ValueError("policy times must fall on recorded steps")
        if observer is not None:
            observer.step(t, dt, m, lN)

        b = coeffs.b(t, alpha, x, modes, m)
        s = coeffs.sig(t, alpha, x, modes, m)
        if M > 1:
            G = extended_rates(rf, m)
            check_step(G, dt)
            alpha = step_states(alpha, G, dt, chain_rng.random(N))
        z = noise_rng.standard_normal((N, d))
        x = x + b * dt + s * np.sqrt(dt) * z

    record(horizon)
    if observer is not None:
        observer.end(horizon, _empirical(x, modes, m0.n_modes), np.bincount(alpha, minlength=M) / N)
    return EnsembleFlow(
        np.asarray(rec_t), np.stack(rec_x), np.stack(rec_i), np.stack(rec_a), events, pre_modes,
        seed, dt, horizon, M, m0.n_modes, record_every, costs,
    )


@dataclass
class Estimate:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


def _particle_gain(flow, coeffs):
    K = flow.times.size
    N = flow.n_particles
    f = np.empty((K, N))
    for k in range(K):
        m = flow.law(k)
        f[k] = coeffs.f(flow.times[k], flow.alpha[k], flow.x[k], flow.modes[k], m)
    running = np.trapezoid(f, flow.times, axis=0) if hasattr(np, "trapezoid") else np.trapz(f, flow.times, axis=0)
    last = flow.law(K - 1)
    terminal = coeffs.h(flow.alpha[-1], flow.x[-1], flow.modes[-1], last)
    return running + terminal


def gain(flow, coeffs, g=None):
    """Per-particle ``int f dt`` (trapezoid on recorded times) + terminal reward - switch costs.

    Costs are the pathwise ones logged at switching times.
    """
    per = _particle_gain(flow, coeffs)
    if flow.costs is not None:
        per = per - flow.costs
    N = per.size
    se = float(np.std(per, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return Estimate(float(np.mean(per)), se)


def no_switch_value(coeffs, rf, m0, l0, t, N, dt, seed, horizon, initial="sample"):
    """Value without switching started at time t (unstopped dynamics)."""
    flow = simulate(coeffs, rf, None, SwitchPolicy.none(), m0, l0, N, dt, horizon, seed, t0=t, initial=initial)
    return gain(flow, coeffs)


@dataclass
class MartingaleReport:
    """Per-window regression of increments on the centred window-start position.

    The intercept estimates the mean increment; a window passes when
    ``|intercept| <= z * SE``.  Slopes are reported for inspection only.

    Columns of ``table``: window start, window end, process (0 for M, 1 for N),
    coordinate, intercept, intercept SE, slope, slope SE.
    """

    table: np.ndarray
    max_abs_mean: float
    stderr_at_max: float
    max_t_stat: float
    passed: bool


def _ols(y, X):
    n = y.size
    Xc = X - X.mean(axis=0)
    A = np.column_stack([np.ones(n), Xc])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(n - A.shape[1], 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(A.T @ A)
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0))


def martingale_residual(flow, coeffs, window=10, drift=None, z=3.0, atol=1e-12):
    """Check that ``M = X - int b`` and ``N = |M|^2 - int |sigma|^2`` have zero conditional increments.

    ``drift`` optionally replaces the drift coefficient (negative controls).
    Needs a flow recorded at every step.
    """
    if flow.record_every != 1:
        raise ValueError("martingale_residual needs every step recorded")
    drift = coeffs.drift if drift is None else drift
    K = flow.times.size - 1
    rows = []
    worst = (0.0, 0.0)
    max_t = 0.0
    passed = True
    for k0 in range(0, K, window):
        k1 = min(k0 + window, K)
        Mw = np.zeros((flow.n_particles, flow.dim))
        qv = np.zeros(flow.n_particles)
        for k in range(k0, k1):
            t = flow.times[k]
            m = flow.law(k)
            b = np.broadcast_to(drift(t, flow.alpha[k], flow.x[k], flow.modes[k], m), Mw.shape)
            s = coeffs.sig(t, flow.alpha[k], flow.x[k], flow.modes[k], m)
            h = flow.times[k + 1] - t
            Mw += flow.x[k + 1] - flow.x[k] - b * h
            qv += np.sum(s**2, axis=1) * h
        Nw = np.sum(Mw**2, axis=1) - qv
        X0 = flow.x[k0]
        series = [(0, c, Mw[:, c]) for c in range(flow.dim)] + [(1, -1, Nw)]
        for proc, c, y in series:
            coef, se = _ols(y, X0)
            rows.append([flow.times[k0], flow.times[k1], proc, c, coef[0], se[0], coef[1], se[1]])
            est, err = coef[0], se[0]
            if abs(est) > z * err + atol:
                passed = False
            if err > 0:
                max_t = max(max_t, abs(est) / err)
            elif abs(est) > atol:
                max_t = np.inf
            if abs(coef[0]) > worst[0]:
                worst = (abs(coef[0]), se[0])
    return MartingaleReport(np.asarray(rows), float(worst[0]), float(worst[1]), float(max_t), passed)
