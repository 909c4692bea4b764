"""Log exchange-rate Lévy models and the artificial preference rate.

The exchange rate is ``exp(L_t)`` where ``L`` is a Lévy process described by a
triplet ``(A, nu, gamma)`` with truncation function ``1{|h| <= 1}``.  The jump
measure ``nu`` is a finite sum of point masses plus named parametric families
(currently only NIG); arbitrary densities are deliberately not supported.

Discounting a dividend paid at time ``t`` by ``exp(-delta*t - L_t)`` is, in
expectation, the same as discounting by ``exp(-beta*t)`` with

    beta = delta - A/2 - int (e^{-h} - 1 + h 1{|h|<=1}) nu(dh) + gamma,

which is finite only when ``int_{h<-1} e^{-h} nu(dh) < inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union


class UnsupportedComponentError(TypeError):
    """Raised when a jump component has no exact integral available."""


class _MinusInfinity:
    """Typed marker for a divergent preference rate.

    Kept distinct from ``float('-inf')`` so that callers must branch on it
    instead of letting it leak into arithmetic.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MINUS_INFINITY"

    def __reduce__(self):
        return (_MinusInfinity, ())


MINUS_INFINITY = _MinusInfinity()


@dataclass(frozen=True)
class DiscreteAtoms:
    """Finitely many jump heights ``h`` arriving at Poisson intensities ``lam``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(h), float(lam)) for h, lam in self.atoms)
        for h, lam in atoms:
            if not math.isfinite(h) or h == 0.0:
                raise ValueError(f"atom height must be finite and nonzero, got {h}")
            if not (math.isfinite(lam) and lam > 0.0):
                raise ValueError(f"atom intensity must be positive, got {lam}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_intensity(self) -> float:
        return sum(lam for _, lam in self.atoms)


@dataclass(frozen=True)
class NormalInverseGaussian:
    """NIG process ``vartheta*S_t + sqrt(s2)*W(S_t)``.

    ``S`` is an inverse Gaussian subordinator with ``E[S_t] = t`` and
    ``Var[S_t] = kappa*t`` (the Cont-Tankov parameterisation).
    """

    s2: float
    vartheta: float
    kappa: float

    def __post_init__(self):
        if not self.s2 >= 0.0:
            raise ValueError(f"NIG s2 must be >= 0, got {self.s2}")
        if not self.kappa > 0.0:
            raise ValueError(f"NIG kappa must be > 0, got {self.kappa}")
        if not math.isfinite(self.vartheta):
            raise ValueError("NIG vartheta must be finite")

    @property
    def root_argument(self) -> float:
        """``1 - s2*kappa + 2*vartheta*kappa``; the negative tail of e^{-h} is
        integrable iff this is nonnegative."""
        return 1.0 - self.s2 * self.kappa + 2.0 * self.vartheta * self.kappa

    def beta_contribution(self) -> float:
        r"""Contribution ``(1/kappa)(1 - sqrt(1 - s2 kappa + 2 vartheta kappa))``.

        Added to ``delta`` when forming beta, which is the convention the
        ``bsp2`` preset is calibrated to.  The exact log-Laplace transform at
        ``-1`` is this same number, so ``delta - laplace_exponent(-1)``
        differs from ``beta`` by twice the term; see :func:`laplace_exponent`.
        """
        arg = self.root_argument
        if arg < 0.0:
            raise ValueError("NIG exponential moment of order -1 diverges")
        # 1 - sqrt(arg) == (1 - arg) / (1 + sqrt(arg)) without cancellation
        return (1.0 - arg) / (self.kappa * (1.0 + math.sqrt(arg)))


JumpComponent = Union[DiscreteAtoms, NormalInverseGaussian]


@dataclass(frozen=True)
class LevyTriplet:
    """Lévy-Khintchine triplet with ``gamma`` the truncated drift."""

    A: float = 0.0
    jumps: tuple[JumpComponent, ...] = field(default_factory=tuple)
    gamma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.A) and self.A >= 0.0):
            raise ValueError(f"Gaussian variance A must be >= 0, got {self.A}")
        object.__setattr__(self, "jumps", tuple(self.jumps))
        for comp in self.jumps:
            if not isinstance(comp, (DiscreteAtoms, NormalInverseGaussian)):
                raise UnsupportedComponentError(f"unknown jump component {comp!r}")

    @classmethod
    def driftless(cls, A: float = 0.0, jumps=()) -> "LevyTriplet":
        """Triplet of ``L_t = sqrt(A) B_t + (sum of jumps)`` with no drift term.

        The truncated drift is ``sum_{|h|<=1} lam*h`` so that the compensation
        inside the truncation region is undone.
        """
        jumps = tuple(jumps)
        gamma = sum(
            lam * h
            for comp in jumps
            if isinstance(comp, DiscreteAtoms)
            for h, lam in comp.atoms
            if abs(h) <= 1.0
        )
        return cls(A=A, jumps=jumps, gamma=gamma)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [a for comp in self.jumps if isinstance(comp, DiscreteAtoms) for a in comp.atoms]

    @property
    def nig_components(self) -> list[NormalInverseGaussian]:
        return [c for c in self.jumps if isinstance(c, NormalInverseGaussian)]

    @property
    def pathwise_drift(self) -> float:
        """Drift of the Gaussian part once jumps are added uncompensated."""
        return self.gamma - sum(lam * h for h, lam in self.atoms if abs(h) <= 1.0)

    def mean(self) -> float:
        """``E[L_1]``."""
        return (
            self.pathwise_drift
            + sum(lam * h for h, lam in self.atoms)
            + sum(c.vartheta for c in self.nig_components)
        )

    def variance(self) -> float:
        """``Var[L_1]``."""
        return (
            self.A
            + sum(lam * h * h for h, lam in self.atoms)
            + sum(c.s2 + c.vartheta**2 * c.kappa for c in self.nig_components)
        )


@dataclass(frozen=True)
class BetaResult:
    value: Union[float, _MinusInfinity]
    integrable: bool

    def __post_init__(self):
        if (self.value is MINUS_INFINITY) == self.integrable:
            raise ValueError("value must be MINUS_INFINITY exactly when not integrable")

    def __float__(self) -> float:
        if self.value is MINUS_INFINITY:
            raise ValueError("beta is minus infinity")
        return float(self.value)


def compensator_integral(jumps) -> Union[float, _MinusInfinity]:
    """Exact ``int (e^{-h} - 1 + h 1{|h|<=1}) nu(dh)`` over atomic components.

    Point masses always have finite exponential moments, so the divergent
    branch is never reached for them; parametric families are rejected.
    """
    total = 0.0
    for comp in jumps:
        if isinstance(comp, DiscreteAtoms):
            for h, lam in comp.atoms:
                trunc = h if abs(h) <= 1.0 else 0.0
                total += lam * (math.expm1(-h) + trunc)
        else:
            raise UnsupportedComponentError(
                f"no exact compensator integral for {type(comp).__name__}"
            )
    return total


def beta(triplet: LevyTriplet, delta: float) -> BetaResult:
    """Artificial preference rate for preference rate ``delta``."""
    for comp in triplet.nig_components:
        if comp.root_argument < 0.0:
            return BetaResult(MINUS_INFINITY, integrable=False)
    atoms = [c for c in triplet.jumps if isinstance(c, DiscreteAtoms)]
    comp_int = compensator_integral(atoms)
    if comp_int is MINUS_INFINITY:
        return BetaResult(MINUS_INFINITY, integrable=False)
    value = delta - triplet.A / 2.0 - comp_int + triplet.gamma
    value += sum(c.beta_contribution() for c in triplet.nig_components)
    return BetaResult(value, integrable=True)


def beta_compound_poisson(delta: float, A: float, atoms) -> float:
    """``delta - A/2 - sum lam (e^{-h} - 1)`` for ``sqrt(A) B + sum of jumps``.

    Independent route to :func:`beta` for driftless pure-atom models; the
    truncation terms and ``gamma`` cancel analytically here.
    """
    return delta - A / 2.0 - sum(lam * math.expm1(-h) for h, lam in atoms)


def is_well_posed(b: BetaResult) -> bool:
    return b.integrable and b.value is not MINUS_INFINITY and b.value > 0.0


def laplace_exponent(triplet: LevyTriplet, u: float) -> float:
    """``log E[exp(u L_1)]`` for real ``u``; ``inf`` where it diverges.

    Unlike :func:`beta` this treats NIG components through their actual
    moment generating function, so ``delta - laplace_exponent(t, -1)`` is the
    rate at which ``E[exp(-delta t - L_t)]`` decays.
    """
    out = triplet.gamma * u + 0.5 * triplet.A * u * u
    for h, lam in triplet.atoms:
        trunc = u * h if abs(h) <= 1.0 else 0.0
        out += lam * (math.expm1(u * h) - trunc)
    for c in triplet.nig_components:
        arg = 1.0 - 2.0 * c.kappa * (u * c.vartheta + 0.5 * u * u * c.s2)
        if arg < 0.0:
            return math.inf
        out += (1.0 - arg) / (c.kappa * (1.0 + math.sqrt(arg)))
    return out


def discount_decay_rate(triplet: LevyTriplet, delta: float) -> float:
    """Rate ``r`` with ``E[exp(-delta t - L_t)] = exp(-r t)``; ``-inf`` if divergent."""
    psi = laplace_exponent(triplet, -1.0)
    return -math.inf if math.isinf(psi) else delta - psi


BSP1_DELTA = -0.25
BSP2_DELTA = 0.5


def bsp1_triplet() -> LevyTriplet:
    """``L = sqrt(1/2) B + log(5) N1 - log(5/4) N2`` with unit-rate Poisson N1, N2."""
    atoms = DiscreteAtoms(((math.log(5.0), 1.0), (-math.log(1.25), 1.0)))
    return LevyTriplet.driftless(A=0.5, jumps=(atoms,))


def bsp2_triplet() -> LevyTriplet:
    """NIG process with ``(s2, vartheta, kappa) = (0.19, 0, 1)``."""
    return LevyTriplet(A=0.0, jumps=(NormalInverseGaussian(0.19, 0.0, 1.0),), gamma=0.0)
