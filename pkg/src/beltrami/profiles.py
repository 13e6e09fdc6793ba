"""One-variable profiles: factor slices f(r), f(z) and the functions u3(.), Gamma(.).

A profile is a uniform 1D sample table with an optional analytic tag.
Tagged profiles are evaluated (and differentiated) from their formula and
extend past the sampled interval; untagged profiles use monotone cubic
interpolation and refuse to extrapolate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("constant", "linear", "power")


def _positive_part(s):
    return np.maximum(s, 0.0)


@dataclass(frozen=True, eq=False)
class Profile:
    origin: float
    spacing: float
    values: np.ndarray
    kind: str | None = None
    params: tuple = ()
    name: str = "profile"
    _domain_rtol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("profile needs at least two samples")
        if not np.all(np.isfinite(vals)):
            raise ValueError("profile samples must be finite")
        if not self.spacing > 0:
            raise ValueError("profile spacing must be positive")
        if self.kind is not None and self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "power" and self.params[0] < 1:
            raise ValueError("power profile needs exponent l >= 1")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    # -- construction ---------------------------------------------------
    @classmethod
    def constant(cls, c, lo=-1.0, hi=1.0, n=3, name="constant"):
        return cls._tagged("constant", (c,), lo, hi, n, name)

    @classmethod
    def linear(cls, slope, intercept=0.0, lo=-1.0, hi=1.0, n=3, name="linear"):
        return cls._tagged("linear", (slope, intercept), lo, hi, n, name)

    @classmethod
    def power(cls, l, scale=1.0, lo=-1.0, hi=1.0, n=65, name="power"):
        """``scale * max(s, 0)**l``."""
        return cls._tagged("power", (l, scale), lo, hi, n, name)

    @classmethod
    def sampled(cls, fn, lo, hi, n, name="sampled"):
        s = np.linspace(lo, hi, n)
        return cls(float(lo), float(s[1] - s[0]), fn(s), None, (), name)

    @classmethod
    def _tagged(cls, kind, params, lo, hi, n, name):
        s = np.linspace(lo, hi, n)
        stub = cls(float(lo), float(s[1] - s[0]), np.zeros(n), kind, params, name)
        return cls(stub.origin, stub.spacing, stub(s), kind, params, name)

    @classmethod
    def from_spec(cls, spec: dict) -> "Profile":
        """Build from a JSON-style block, e.g. ``{"kind": "power", "l": 2}``."""
        spec = dict(spec)
        kind = spec.pop("kind")
        lo, hi = spec.pop("lo", -1.0), spec.pop("hi", 1.0)
        n = int(spec.pop("n", 65))
        name = spec.pop("name", kind)
        if kind == "constant":
            out = cls.constant(spec.pop("value"), lo, hi, n, name)
        elif kind == "linear":
            out = cls.linear(spec.pop("slope"), spec.pop("intercept", 0.0), lo, hi, n, name)
        elif kind == "power":
            out = cls.power(spec.pop("l"), spec.pop("scale", 1.0), lo, hi, n, name)
        elif kind == "samples":
            vals = np.asarray(spec.pop("values"), dtype=float)
            out = cls(float(spec.pop("origin")), float(spec.pop("spacing")), vals, None, (), name)
        else:
            raise ValueError(f"unknown profile kind {kind!r}")
        if spec:
            raise ValueError(f"unknown profile keys: {sorted(spec)}")
        return out

    def to_spec(self) -> dict:
        lo, hi = self.domain
        if self.kind is None:
            return {"kind": "samples", "origin": self.origin, "spacing": self.spacing,
                    "values": self.values.tolist(), "name": self.name}
        keys = {"constant": ("value",), "linear": ("slope", "intercept"), "power": ("l", "scale")}[self.kind]
        out = {"kind": self.kind, "lo": lo, "hi": hi, "n": int(self.values.size), "name": self.name}
        out.update(zip(keys, self.params))
        return out

    # -- geometry -------------------------------------------------------
    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.values.size)

    @property
    def domain(self) -> tuple[float, float]:
        return self.origin, self.origin + self.spacing * (self.values.size - 1)

    def check_domain(self, s):
        if self.kind is not None:
            return
        lo, hi = self.domain
        tol = self._domain_rtol * (hi - lo)
        s = np.asarray(s)
        if s.size and (np.min(s) < lo - tol or np.max(s) > hi + tol):
            raise ValueError(
                f"profile {self.name!r} domain [{lo:g}, {hi:g}] exceeded by "
                f"[{np.min(s):g}, {np.max(s):g}]"
            )

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.nodes, self.values, extrapolate=True)

    @cached_property
    def _interp_derivative(self):
        d = np.gradient(self.values, self.spacing, edge_order=2)
        return PchipInterpolator(self.nodes, d, extrapolate=True)

    @cached_property
    def _interp_g(self):
        g = np.gradient(self.values, self.spacing, edge_order=2) * self.values
        return PchipInterpolator(self.nodes, g, extrapolate=True)

    # -- evaluation -----------------------------------------------------
    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        self.check_domain(s)
        if self.kind == "constant":
            return np.full_like(s, self.params[0])
        if self.kind == "linear":
            a, b = self.params
            return a * s + b
        if self.kind == "power":
            l, k = self.params
            return k * _positive_part(s) ** l
        return self._interp(s)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        self.check_domain(s)
        if self.kind == "constant":
            return np.zeros_like(s)
        if self.kind == "linear":
            return np.full_like(s, self.params[0])
        if self.kind == "power":
            l, k = self.params
            if l == 1:
                return np.where(s > 0, k, 0.0)
            return k * l * _positive_part(s) ** (l - 1)
        return self._interp_derivative(s)

    def integral(self, s):
        """Antiderivative vanishing at s = 0."""
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return self.params[0] * s
        if self.kind == "linear":
            a, b = self.params
            return 0.5 * a * s * s + b * s
        if self.kind == "power":
            l, k = self.params
            return k * _positive_part(s) ** (l + 1) / (l + 1)
        self.check_domain(s)
        anti = self._interp.antiderivative()
        return anti(s) - anti(0.0)

    def g(self, s):
        """The Grad-Shafranov nonlinearity ``derivative(s) * value(s)``."""
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            l, k = self.params
            return k * k * l * _positive_part(s) ** (2 * l - 1)
        if self.kind in ("constant", "linear"):
            return self.derivative(s) * self(s)
        self.check_domain(s)
        return self._interp_g(s)

    def g_prime(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            l, k = self.params
            if l == 1:
                return np.where(s > 0, k * k, 0.0)
            return k * k * l * (2 * l - 1) * _positive_part(s) ** (2 * l - 2)
        if self.kind == "constant":
            return np.zeros_like(s)
        if self.kind == "linear":
            return np.full_like(s, self.params[0] ** 2)
        self.check_domain(s)
        return self._interp_g.derivative()(s)
