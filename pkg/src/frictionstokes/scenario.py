"""Problem data for one run: geometry, physics, wall data, friction law, discretization."""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError
from .fem import WallData
from .functions import Builtin, as_builtin, as_profile, evaluate, profile_to_data
from .mesh import DomainSpec


@dataclass(frozen=True)
class CoulombSpec:
    """Non-local threshold F0 + Fsigma * int_0^t S(t - s) |R(sigma^d)(s)| ds.

    ``C_prime`` is the contraction-constant estimate that fixes the initial
    window length; ``window`` forces a window length instead.
    """

    F0: object = 0.0
    Fsigma: object = 0.0
    S: object = 1.0
    p_exponent: float = 4.0
    C_S: float = None
    C_prime: float = 0.125
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 6
    window: float = None

    def __post_init__(self):
        object.__setattr__(self, "F0", as_profile(self.F0, "t"))
        object.__setattr__(self, "Fsigma", as_profile(self.Fsigma, "t"))
        object.__setattr__(self, "S", as_builtin(self.S, "t"))
        if self.S.arg != "t":
            raise ScenarioError("friction.coulomb.S", "kernel must be a function of t")
        if not self.p_exponent > 2:
            raise ScenarioError("friction.coulomb.p_exponent", "p must exceed 2")
        if not self.C_prime > 0:
            raise ScenarioError("friction.coulomb.C_prime", "contraction estimate must be positive")
        if not self.tol > 0:
            raise ScenarioError("friction.coulomb.tol", "tolerance must be positive")
        if self.window is not None and not self.window > 0:
            raise ScenarioError("friction.coulomb.window", "window length must be positive")

    def kernel_bound(self, T):
        if self.C_S is not None:
            return self.C_S
        lo, hi = self.S.bounds(0.0, T)
        d = np.abs(self.S.derivative(np.linspace(0.0, T, 2001), 1)).max()
        return float(max(abs(lo), abs(hi), d))

    def check(self, xprime, T):
        ts = np.linspace(0.0, T, 33)
        for key, fn in (("F0", self.F0), ("Fsigma", self.Fsigma)):
            for t in ts:
                if np.any(evaluate(fn, xprime, t) < 0):
                    raise ScenarioError(f"friction.coulomb.{key}", f"{key} must be nonnegative")
        if np.any(self.S.value(np.linspace(0.0, T, 2001)) < 0):
            raise ScenarioError("friction.coulomb.S", "kernel S must be nonnegative")

    def to_dict(self):
        out = {
            "F0": profile_to_data(self.F0),
            "Fsigma": profile_to_data(self.Fsigma),
            "S": self.S.to_dict(),
            "p_exponent": self.p_exponent,
            "C_prime": self.C_prime,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "max_halvings": self.max_halvings,
        }
        if self.C_S is not None:
            out["C_S"] = self.C_S
        if self.window is not None:
            out["window"] = self.window
        return out


@dataclass(frozen=True)
class VerifySettings:
    eps_list: tuple = (1e-2, 1e-3, 1e-4)
    dt_list: tuple = (1 / 16, 1 / 32, 1 / 64)
    reference_dts: tuple = (1 / 128, 1 / 256)
    steady_tol: float = 1e-8

    def to_dict(self):
        return {
            "eps_list": list(self.eps_list),
            "dt_list": list(self.dt_list),
            "reference_dts": list(self.reference_dts),
            "steady_tol": self.steady_tol,
        }


@dataclass(frozen=True)
class Scenario:
    """Continuous problem data plus discretization parameters.

    ``f`` holds one profile per velocity component; ``v0`` is ``"lifting"``
    (v0 = G0, so the homogeneous unknown starts at zero) or a callable
    ``x -> (n, d)`` giving the full initial velocity.
    """

    domain: DomainSpec = field(default_factory=DomainSpec)
    resolution: object = 8
    mu: float = 1.0
    T: float = 1.0
    dt: float = 0.1
    f: tuple = None
    zeta: object = 1.0
    wall: WallData = field(default_factory=WallData)
    v0: object = "lifting"
    threshold: object = 1.0
    eps_schedule: tuple = None
    compatibility: bool = True
    regularity: bool = False
    rho: float = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    coulomb: CoulombSpec = None
    verify: VerifySettings = field(default_factory=VerifySettings)

    def __post_init__(self):
        d = self.domain.dimension
        if self.f is None:
            object.__setattr__(self, "f", tuple(as_builtin(0.0) for _ in range(d)))
        else:
            f = tuple(self.f)
            if len(f) != d:
                raise ScenarioError("physics.f", f"body force needs {d} components")
            object.__setattr__(self, "f", tuple(fn if callable(fn) and not isinstance(fn, Builtin) else as_profile(fn) for fn in f))
        object.__setattr__(self, "zeta", as_builtin(self.zeta, "t"))
        object.__setattr__(self, "threshold", as_profile(self.threshold, "t"))
        if self.zeta.arg != "t":
            raise ScenarioError("physics.zeta", "zeta must be a function of t")
        if abs(float(self.zeta.value(0.0)) - 1.0) > 1e-12:
            raise ScenarioError("physics.zeta", "zeta(0) must equal 1")
        if not self.mu > 0:
            raise ScenarioError("physics.mu", "viscosity must be positive")
        if not self.T >= 0:
            raise ScenarioError("physics.T", "final time must be nonnegative")
        if not self.dt > 0:
            raise ScenarioError("discretization.dt", "time step must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ScenarioError("discretization.dt", "T must be an integer multiple of dt")
        if self.eps_schedule is None:
            object.__setattr__(self, "eps_schedule", (1e-4 * max(abs(self.wall.s), 1.0),))
        eps = tuple(float(e) for e in self.eps_schedule)
        if not eps or min(eps) <= 0 or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ScenarioError("friction.eps_schedule", "eps values must be positive and strictly decreasing")
        object.__setattr__(self, "eps_schedule", eps)
        if not (self.v0 == "lifting" or callable(self.v0)):
            raise ScenarioError("physics.v0", "initial velocity must be 'lifting' or a callable")
        if self.rho is not None and not self.rho > 0:
            raise ScenarioError("discretization.rho", "mollifier radius must be positive")
        xs = self.domain.sample_points(65 if d == 2 else 9)[:, : d - 1]
        for t in np.linspace(0.0, self.T, 17):
            if np.any(evaluate(self.threshold, xs, t) < 0):
                raise ScenarioError("friction.tresca.ell", "threshold must be nonnegative")
        if self.coulomb is not None:
            self.coulomb.check(xs, self.T)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def eps(self):
        return self.eps_schedule[-1]

    def time_grid(self):
        return self.dt * np.arange(self.n_steps + 1)

    def body_force(self, x, t):
        return np.stack([np.broadcast_to(evaluate(fn, x, t), x.shape[:-1]) for fn in self.f], axis=-1)

    def with_changes(self, **kw):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kw)
        return Scenario(**data)

    def to_dict(self):
        """Canonical data; callables are recorded by name only."""

        def prof(fn):
            try:
                return profile_to_data(fn)
            except Exception:
                return f"callable:{getattr(fn, '__qualname__', type(fn).__name__)}"

        out = {
            "domain": self.domain.to_dict(),
            "physics": {
                "mu": self.mu,
                "T": self.T,
                "f": [prof(fn) for fn in self.f],
                "zeta": self.zeta.to_dict(),
                "v0": self.v0 if isinstance(self.v0, str) else prof(self.v0),
                "compatibility": self.compatibility,
                "regularity": self.regularity,
            },
            "wall": self.wall.to_dict(),
            "discretization": {
                "resolution": list(self.resolution) if not np.isscalar(self.resolution) else int(self.resolution),
                "dt": self.dt,
                "newton_tol": self.newton_tol,
                "newton_max_iter": self.newton_max_iter,
            },
            "friction": {"eps_schedule": list(self.eps_schedule)},
            "verify": self.verify.to_dict(),
        }
        if self.rho is not None:
            out["discretization"]["rho"] = self.rho
        if self.coulomb is None:
            out["friction"]["tresca"] = {"ell": prof(self.threshold)}
        else:
            out["friction"]["coulomb"] = self.coulomb.to_dict()
        return out

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()
