"""Catalog of named scalar functions used to describe scenario data.

Each entry is a function of one scalar argument, chosen per use site from the
time ``t`` or one coordinate ``x0``, ``x1``, ``x2``.  There is deliberately no
expression language: every scenario is built from these few profiles.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

KINDS = {
    "constant": ("value",),
    "linear": ("a", "b"),
    "sine": ("offset", "amplitude", "omega", "phase"),
    "exp-kernel": ("scale", "rate"),
    "bump": ("center", "radius", "height"),
}
_DEFAULTS = {"phase": 0.0}
ARGS = ("t", "x0", "x1", "x2")


@dataclass(frozen=True)
class Builtin:
    kind: str
    params: dict = field(default_factory=dict)
    arg: str = "t"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown function kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if self.arg not in ARGS:
            raise UsageError(f"unknown function argument {self.arg!r}")
        params = dict(self.params)
        for name in KINDS[self.kind]:
            if name not in params:
                if name in _DEFAULTS:
                    params[name] = _DEFAULTS[name]
                else:
                    raise UsageError(f"{self.kind} needs parameter {name!r}")
        unknown = set(params) - set(KINDS[self.kind])
        if unknown:
            raise UsageError(f"{self.kind} got unknown parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {k: float(v) for k, v in params.items()})
        if self.kind == "bump" and self.params["radius"] <= 0:
            raise UsageError("bump radius must be positive")

    @classmethod
    def constant(cls, value, arg="t"):
        return cls("constant", {"value": value}, arg)

    def to_dict(self):
        out = {"kind": self.kind}
        out.update(self.params)
        if self.arg != "t":
            out["arg"] = self.arg
        return out

    @classmethod
    def from_dict(cls, data, default_arg="t"):
        data = dict(data)
        kind = data.pop("kind", None)
        arg = data.pop("arg", default_arg)
        if kind is None:
            raise UsageError("function entry needs a 'kind'")
        return cls(kind, data, arg)

    def select(self, x=None, t=None):
        """Pick the argument this function depends on from a point array / time."""
        if self.arg == "t":
            if t is None:
                raise UsageError("function of t evaluated without a time")
            if x is None:
                return np.asarray(t, dtype=float)
            return np.full(np.shape(x)[:-1], float(t))
        if x is None:
            raise UsageError(f"function of {self.arg} evaluated without coordinates")
        return np.asarray(x, dtype=float)[..., int(self.arg[1])]

    def __call__(self, x=None, t=None):
        return self.value(self.select(x, t))

    def value(self, s):
        return self.derivative(s, 0)

    def derivative(self, s, order=1):
        """d^order/ds^order of the profile, order in {0, 1, 2}."""
        s = np.asarray(s, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(s, p["value"]) if order == 0 else np.zeros_like(s)
        if self.kind == "linear":
            if order == 0:
                return p["a"] + p["b"] * s
            return np.full_like(s, p["b"]) if order == 1 else np.zeros_like(s)
        if self.kind == "sine":
            arg = p["omega"] * s + p["phase"]
            amp, om = p["amplitude"], p["omega"]
            if order == 0:
                return p["offset"] + amp * np.sin(arg)
            if order == 1:
                return amp * om * np.cos(arg)
            return -amp * om * om * np.sin(arg)
        if self.kind == "exp-kernel":
            return p["scale"] * (-p["rate"]) ** order * np.exp(-p["rate"] * s)
        return self._bump(s, order)

    def _bump(self, s, order):
        c, r, hgt = self.params["center"], self.params["radius"], self.params["height"]
        q = (s - c) / r
        inside = np.abs(q) < 1.0
        out = np.zeros_like(s)
        qi = q[inside]
        u = 1.0 - qi * qi
        g = hgt * np.exp(1.0 - 1.0 / u)
        if order == 0:
            out[inside] = g
        else:
            dphi = -2.0 * qi / u**2
            if order == 1:
                out[inside] = g * dphi / r
            else:
                d2phi = -2.0 / u**2 - 8.0 * qi * qi / u**3
                out[inside] = g * (dphi**2 + d2phi) / r**2
        return out

    def lipschitz(self, lo, hi, samples=2001):
        """Lipschitz constant on [lo, hi] (exact for the smooth kinds, sampled for bumps)."""
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            return abs(p["b"])
        if self.kind == "sine":
            return abs(p["amplitude"] * p["omega"])
        s = np.linspace(lo, hi, samples)
        return float(np.max(np.abs(self.derivative(s, 1))))

    def bounds(self, lo, hi, samples=2001):
        s = np.linspace(lo, hi, samples)
        v = self.value(s)
        return float(v.min()), float(v.max())


def as_builtin(value, arg="t"):
    """Coerce a number, dict or Builtin into a Builtin."""
    if isinstance(value, Builtin):
        return value
    if isinstance(value, dict):
        return Builtin.from_dict(value, default_arg=arg)
    return Builtin.constant(float(value), arg)


def as_profile(value, arg="t"):
    """Coerce to a Builtin or a tuple of Builtins (their product)."""
    if isinstance(value, (list, tuple)):
        return tuple(as_builtin(v, arg) for v in value)
    return as_builtin(value, arg)


def evaluate(fn, x=None, t=None):
    """Evaluate a profile (Builtin, product tuple, dict, number or callable(x, t))."""
    if isinstance(fn, (dict, list)):
        fn = as_profile(fn)
    if isinstance(fn, Builtin):
        return fn(x=x, t=t)
    if isinstance(fn, tuple):
        out = fn[0](x=x, t=t)
        for factor in fn[1:]:
            out = out * factor(x=x, t=t)
        return out
    if callable(fn):
        return np.asarray(fn(x, t), dtype=float)
    shape = np.shape(x)[:-1] if x is not None else np.shape(t)
    return np.full(shape, float(fn))


def profile_to_data(fn):
    if isinstance(fn, Builtin):
        return fn.to_dict()
    if isinstance(fn, tuple):
        return [f.to_dict() for f in fn]
    raise UsageError("callable profiles cannot be serialized")
