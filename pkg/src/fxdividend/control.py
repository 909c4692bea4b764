"""Closed-form optimal dividend strategies under an exchange-rate discount.

After factoring out ``exp(-l)`` the problem reduces to a Brownian surplus
``dX = mu dt + sigma dW`` discounted at the constant rate ``beta``.  Two
payout classes are handled:

* restricted: dividend rate ``u_t`` in ``[0, xi]``; optimal policy pays ``xi``
  strictly above a threshold ``x_r`` (or always, when ``beta >= -xi*eta``);
* unrestricted: any nondecreasing cumulative payout; optimal policy reflects
  the surplus at a barrier ``x_u``.

All values are for log-exchange level ``l = 0``; use :func:`eval_value_full`
for other levels.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .levy import LevyTriplet, beta as levy_beta, is_well_posed


class IllPosedError(ValueError):
    """The discounted problem has infinite value (``beta <= 0``)."""


class Mode(str, enum.Enum):
    RESTRICTED = "restricted"
    UNRESTRICTED = "unrestricted"


class Case(str, enum.Enum):
    ALWAYS_PAY_MAX = "always_pay_max"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class ProblemSpec:
    mu: float
    sigma: float
    beta: float
    xi: Optional[float] = None
    mode: Mode = Mode.RESTRICTED
    delta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.mu > 0.0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not (isinstance(self.beta, (int, float)) and math.isfinite(self.beta)) or self.beta <= 0.0:
            raise IllPosedError(f"beta must be finite and > 0, got {self.beta!r}")
        if self.mode is Mode.RESTRICTED and not (self.xi is not None and self.xi > 0.0):
            raise ValueError(f"restricted mode needs xi > 0, got {self.xi}")
        if self.xi is not None and not self.xi > 0.0:
            raise ValueError(f"xi must be > 0, got {self.xi}")

    @classmethod
    def from_model(cls, mu, sigma, delta, triplet: LevyTriplet, xi=None, mode=Mode.RESTRICTED):
        """Build a spec whose ``beta`` comes from the exchange-rate triplet."""
        b = levy_beta(triplet, delta)
        if not is_well_posed(b):
            raise IllPosedError(f"beta = {b.value!r}: problem is not well posed")
        return cls(mu=mu, sigma=sigma, beta=float(b.value), xi=xi, mode=mode, delta=delta)


@dataclass(frozen=True)
class RootConstants:
    theta: float
    zeta: float
    eta: Optional[float] = None


def root_constants(spec: ProblemSpec) -> RootConstants:
    """Roots of ``sigma^2 y^2/2 + (mu - u) y - beta = 0`` for ``u = 0`` and ``u = xi``."""
    mu, s2, b = spec.mu, spec.sigma**2, spec.beta
    if not b > 0.0:
        raise IllPosedError("beta must be positive")
    disc = math.sqrt(mu * mu + 2.0 * b * s2)
    # mu > 0: the positive root suffers cancellation in the textbook form
    theta = 2.0 * b / (mu + disc)
    zeta = -(mu + disc) / s2
    eta = None
    if spec.xi is not None:
        a = spec.xi - mu
        disc_u = math.sqrt(a * a + 2.0 * b * s2)
        eta = (a - disc_u) / s2 if a <= 0.0 else -2.0 * b / (a + disc_u)
    return RootConstants(theta, zeta, eta)


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("surplus must be >= 0")
    return arr


def _ret(arr, x):
    return float(arr) if np.ndim(x) == 0 else arr


@dataclass(frozen=True)
class RestrictedSolution:
    spec: ProblemSpec
    case: Case
    x_r: float
    constants: RootConstants
    normalizer: float

    @property
    def barrier(self) -> float:
        return self.x_r

    @property
    def cap(self) -> float:
        """Limit of F at infinity, ``xi/beta``."""
        return self.spec.xi / self.spec.beta

    def derivative(self, x, order: int = 0):
        """``F``, ``F'`` or ``F''`` at ``x`` (closed form, vectorised)."""
        arr = _as_array(x)
        th, ze, et = self.constants.theta, self.constants.zeta, self.constants.eta
        if self.case is Case.ALWAYS_PAY_MAX:
            e = np.exp(et * arr)
            out = self.cap * (1.0 - e) if order == 0 else -self.cap * et**order * e
            return _ret(out, x)
        below = arr <= self.x_r
        xl = np.where(below, arr, self.x_r)
        left = (th**order * np.exp(th * xl) - ze**order * np.exp(ze * xl)) / self.normalizer
        e = np.exp(et * (np.where(below, self.x_r, arr) - self.x_r))
        right = self.cap + e / et if order == 0 else et ** (order - 1) * e
        return _ret(np.where(below, left, right), x)

    def __call__(self, x):
        return self.derivative(x, 0)


@dataclass(frozen=True)
class UnrestrictedSolution:
    spec: ProblemSpec
    x_u: float
    constants: RootConstants
    normalizer: float

    @property
    def barrier(self) -> float:
        return self.x_u

    def derivative(self, x, order: int = 0):
        """``G``, ``G'`` or ``G''`` at ``x`` (closed form, vectorised)."""
        arr = _as_array(x)
        th, ze = self.constants.theta, self.constants.zeta
        below = arr <= self.x_u
        xl = np.where(below, arr, self.x_u)
        left = (th**order * np.exp(th * xl) - ze**order * np.exp(ze * xl)) / self.normalizer
        if order == 0:
            right = self.spec.mu / self.spec.beta + arr - self.x_u
        else:
            right = np.full_like(arr, 1.0 if order == 1 else 0.0)
        return _ret(np.where(below, left, right), x)

    def __call__(self, x):
        return self.derivative(x, 0)


Solution = Union[RestrictedSolution, UnrestrictedSolution]


def restricted_solution(spec: ProblemSpec) -> RestrictedSolution:
    if spec.xi is None:
        raise ValueError("restricted solution needs xi")
    c = root_constants(spec)
    th, ze, et = c.theta, c.zeta, c.eta
    if spec.beta >= -spec.xi * et:
        return RestrictedSolution(spec, Case.ALWAYS_PAY_MAX, 0.0, c, th - ze)
    x_r = math.log((ze * ze - et * ze) / (th * th - et * th)) / (th - ze)
    norm = th * math.exp(th * x_r) - ze * math.exp(ze * x_r)
    return RestrictedSolution(spec, Case.THRESHOLD, x_r, c, norm)


def unrestricted_solution(spec: ProblemSpec) -> UnrestrictedSolution:
    c = root_constants(spec)
    th, ze = c.theta, c.zeta
    x_u = 2.0 * math.log(-ze / th) / (th - ze)
    norm = th * math.exp(th * x_u) - ze * math.exp(ze * x_u)
    return UnrestrictedSolution(spec, x_u, c, norm)


def solve(spec: ProblemSpec) -> Solution:
    if spec.mode is Mode.RESTRICTED:
        return restricted_solution(spec)
    return unrestricted_solution(spec)


def eval_F(sol: RestrictedSolution, x):
    return sol.derivative(x, 0)


def eval_G(sol: UnrestrictedSolution, x):
    return sol.derivative(x, 0)


def eval_value_full(l, x, sol: Solution):
    """Value at log-exchange level ``l``: ``exp(-l) * V(0, x)``."""
    out = np.exp(-np.asarray(l, dtype=float)) * np.asarray(sol.derivative(x, 0))
    return float(out) if np.ndim(out) == 0 else out


def optimal_rate(sol: RestrictedSolution, x):
    """Optimal restricted payout rate; zero exactly at the threshold."""
    arr = np.asarray(x, dtype=float)
    rate = np.where(arr > sol.x_r, sol.spec.xi, 0.0)
    return _ret(rate, x)


def _fd_derivatives(f, x, h):
    x = np.asarray(x, dtype=float)
    if np.any(x - h < 0.0):
        raise ValueError("finite-difference stencil leaves the domain x >= 0")
    fm, f0, fp = f(x - h), f(x), f(x + h)
    return f0, (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)


def _derivs(sol, x, h):
    if h is None:
        return sol.derivative(x, 0), sol.derivative(x, 1), sol.derivative(x, 2)
    return _fd_derivatives(sol, x, h)


def hjb_residual_restricted(sol: RestrictedSolution, x, h: Optional[float] = None):
    """Residual of ``mu F' + sigma^2 F''/2 - beta F + sup_{u<=xi} u (1 - F')``.

    ``h=None`` uses closed-form derivatives, otherwise central differences.
    """
    s = sol.spec
    f, f1, f2 = _derivs(sol, x, h)
    res = s.mu * f1 + 0.5 * s.sigma**2 * f2 - s.beta * f + s.xi * np.maximum(0.0, 1.0 - f1)
    return _ret(res, x)


def hjb_residual_unrestricted(sol: UnrestrictedSolution, x, h: Optional[float] = None):
    """Both terms of ``max{mu G' + sigma^2 G''/2 - beta G, 1 - G'}``."""
    s = sol.spec
    g, g1, g2 = _derivs(sol, x, h)
    ode = s.mu * g1 + 0.5 * s.sigma**2 * g2 - s.beta * g
    return _ret(ode, x), _ret(1.0 - g1, x)


def hjb_residual(sol: Solution, x, h: Optional[float] = None):
    """Scalar HJB residual for either payout mode."""
    if isinstance(sol, RestrictedSolution):
        return hjb_residual_restricted(sol, x, h)
    ode, grad = hjb_residual_unrestricted(sol, x, h)
    return np.maximum(ode, grad) if np.ndim(x) else max(ode, grad)


@dataclass(frozen=True)
class SensitivityRow:
    beta: float
    x_r: float
    x_u: float
    case: Case


def sensitivity_scan(template: ProblemSpec, beta_grid) -> list[SensitivityRow]:
    """Barriers as functions of the preference rate; the grid is sorted first."""
    grid = sorted(float(y) for y in beta_grid)
    if any(y <= 0.0 for y in grid):
        raise ValueError("beta grid must be strictly positive")
    if len(set(grid)) != len(grid):
        raise ValueError("beta grid must not contain duplicates")
    rows = []
    for y in grid:
        spec = replace(template, beta=y)
        xr = restricted_solution(spec)
        xu = unrestricted_solution(spec)
        rows.append(SensitivityRow(y, xr.x_r, xu.x_u, xr.case))
    return rows


def barriers_strictly_decreasing(rows: list[SensitivityRow]) -> bool:
    """``x_u`` over all rows and ``x_r`` over threshold-case rows decrease strictly."""
    xu = [r.x_u for r in rows]
    xr = [r.x_r for r in rows if r.case is Case.THRESHOLD]
    return all(a > b for a, b in zip(xu, xu[1:])) and all(a > b for a, b in zip(xr, xr[1:]))
