"""Closed catalog of scalar functions of the spatial variable.

Every function acts on one coordinate of ``x`` and carries its own first and
second derivatives, so cylindrical functionals and generators never need
numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("constant", "affine", "affine_pos", "quadratic", "exp")


def as_points(x, dim=None):
    """Coerce ``x`` to a float array of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim in (None, 1) else x.reshape(1, -1)
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


@dataclass(frozen=True)
class ScalarFunction:
    """``psi(x)`` from the catalog, applied to coordinate ``coord`` of x.

    kinds and parameters:
      constant   (c,)           c
      affine     (a, b)         a*x + b
      affine_pos (a, b)         max(a*x + b, 0)
      quadratic  (a, b, c)      a*x**2 + b*x + c
      exp        (s, r)         s*exp(r*x)
    """

    kind: str
    params: tuple = field(default=(0.0,))
    coord: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown catalog function {self.kind!r}")
        need = {"constant": 1, "affine": 2, "affine_pos": 2, "quadratic": 3, "exp": 2}[self.kind]
        params = tuple(float(p) for p in self.params)
        if len(params) != need:
            raise ValueError(f"{self.kind} takes {need} parameters, got {len(params)}")
        if not np.all(np.isfinite(params)):
            raise ValueError("catalog parameters must be finite")
        object.__setattr__(self, "params", params)

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d.get("params", ())), int(d.get("coord", 0)))

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params), "coord": self.coord}

    def _z(self, x):
        return as_points(x)[:, self.coord]

    def __call__(self, x):
        z = self._z(x)
        p = self.params
        if self.kind == "constant":
            return np.full_like(z, p[0])
        if self.kind == "affine":
            return p[0] * z + p[1]
        if self.kind == "affine_pos":
            return np.maximum(p[0] * z + p[1], 0.0)
        if self.kind == "quadratic":
            return p[0] * z**2 + p[1] * z + p[2]
        return p[0] * np.exp(p[1] * z)

    def d1(self, x):
        """Derivative along ``coord``."""
        z = self._z(x)
        p = self.params
        if self.kind == "constant":
            return np.zeros_like(z)
        if self.kind == "affine":
            return np.full_like(z, p[0])
        if self.kind == "affine_pos":
            return np.where(p[0] * z + p[1] > 0, p[0], 0.0)
        if self.kind == "quadratic":
            return 2 * p[0] * z + p[1]
        return p[0] * p[1] * np.exp(p[1] * z)

    def d2(self, x):
        z = self._z(x)
        p = self.params
        if self.kind in ("constant", "affine", "affine_pos"):
            return np.zeros_like(z)
        if self.kind == "quadratic":
            return np.full_like(z, 2 * p[0])
        return p[0] * p[1] ** 2 * np.exp(p[1] * z)

    def grad(self, x, dim):
        """Full gradient, shape (n, dim); only ``coord`` is nonzero."""
        out = np.zeros((as_points(x, dim).shape[0], dim))
        out[:, self.coord] = self.d1(x)
        return out

    def hess_diag(self, x, dim):
        out = np.zeros((as_points(x, dim).shape[0], dim))
        out[:, self.coord] = self.d2(x)
        return out


def constant(c):
    return ScalarFunction("constant", (c,))


def identity(coord=0):
    return ScalarFunction("affine", (1.0, 0.0), coord)


def square(coord=0):
    return ScalarFunction("quadratic", (1.0, 0.0, 0.0), coord)


@dataclass(frozen=True)
class TimeFactor:
    """Time weight ``tau(t)``: ``constant`` -> scale, ``remaining`` -> scale*(horizon - t)."""

    kind: str = "constant"
    scale: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "remaining"):
            raise ValueError(f"unknown time factor {self.kind!r}")

    def __call__(self, t):
        if self.kind == "constant":
            return self.scale
        return self.scale * (self.horizon - t)

    def dt(self, t):
        return 0.0 if self.kind == "constant" else -self.scale

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "constant"), float(d.get("scale", 1.0)), float(d.get("horizon", 1.0)))

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "horizon": self.horizon}
