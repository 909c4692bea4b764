"""Finite-difference policy iteration for the reduced dividend HJB equations.

Independent of the closed forms: the only shared ingredient is the model
itself (``mu``, ``sigma``, ``beta``, ``xi``).  The grid is uniform on
``[0, x_max]`` with ``V(0) = 0``.

Right boundary
--------------
restricted:    far out the policy pays ``xi`` and the bounded solution of
               ``(mu - xi) V' + sigma^2 V''/2 - beta V + xi = 0`` satisfies the
               Robin condition ``V' = lam (V - xi/beta)`` with ``lam`` the
               negative characteristic root (found numerically here).
unrestricted:  ``V' = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .control import Mode, ProblemSpec


class OracleConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleResult:
    x: np.ndarray
    values: np.ndarray
    pay: np.ndarray  # boolean policy per node
    barrier_index: int
    iterations: int

    @property
    def barrier(self) -> float:
        return float(self.x[self.barrier_index])


def _decaying_root(a: float, s2: float, b: float) -> float:
    roots = np.roots([0.5 * s2, a, -b]).real
    return float(roots.min())


def _fitted_diffusion(drift, s2, h):
    """Il'in-Allen-Southwell coefficient ``(a h / 2) coth(a h / s2)``.

    Reduces to ``s2 / 2`` when the cell Peclet number is small and keeps the
    stencil monotone when it is not.
    """
    pe = np.asarray(drift, dtype=float) * h / s2
    small = np.abs(pe) < 1e-6
    safe = np.where(small, 1.0, pe)
    fitted = 0.5 * s2 * safe / np.tanh(safe)
    return np.where(small, 0.5 * s2 * (1.0 + pe * pe / 3.0), fitted)


def _fill_ode_rows(ab, rhs, idx, drift, s2, beta, h, source):
    """Fitted centred stencil of ``drift V' + s2 V''/2 - beta V + source = 0``."""
    diff = _fitted_diffusion(drift, s2, h) / (h * h)
    adv = drift / (2.0 * h)
    # banded layout for solve_banded((2, 1), ...): ab[1 + i - j, j] = M[i, j]
    ab[0, idx + 1] = diff + adv  # super-diagonal  M[i, i+1]
    ab[1, idx] = -2.0 * diff - beta
    ab[2, idx - 1] = diff - adv  # sub-diagonal    M[i, i-1]
    rhs[idx] = -source


def fd_policy_iteration_oracle(
    spec: ProblemSpec,
    x_max: float,
    n_points: int = 2000,
    max_iter: int = 200,
) -> OracleResult:
    """Solve the discrete HJB on ``n_points`` uniform nodes by Howard's algorithm.

    Restricted mode chooses ``u in {0, xi}`` per node; unrestricted mode
    chooses between the ODE row and the payout row ``(V_i - V_{i-1})/h = 1``.
    Returns the converged values and the first node where payout is active.
    """
    if n_points < 200:
        raise ValueError("n_points must be >= 200")
    if not x_max > 0.0:
        raise ValueError("x_max must be positive")
    mu, s2, b = spec.mu, spec.sigma**2, spec.beta
    x = np.linspace(0.0, x_max, n_points)
    h = x[1] - x[0]
    n = n_points
    interior = np.arange(1, n - 1)
    restricted = spec.mode is Mode.RESTRICTED
    if restricted:
        xi = spec.xi
        lam = _decaying_root(mu - xi, s2, b)
        cap = xi / b
    pay = np.zeros(n, dtype=bool)
    pay[-1] = True

    for it in range(1, max_iter + 1):
        ab = np.zeros((4, n))
        rhs = np.zeros(n)
        ab[1, 0] = 1.0  # V_0 = 0

        if restricted:
            u = np.where(pay[interior], xi, 0.0)
            _fill_ode_rows(ab, rhs, interior, mu - u, s2, b, h, u)
            # (3 V_{n-1} - 4 V_{n-2} + V_{n-3}) / 2h = lam (V_{n-1} - cap)
            ab[1, n - 1] = 1.5 / h - lam
            ab[2, n - 2] = -2.0 / h
            ab[3, n - 3] = 0.5 / h
            rhs[n - 1] = -lam * cap
        else:
            ode = interior[~pay[interior]]
            grad = interior[pay[interior]]
            _fill_ode_rows(ab, rhs, ode, np.full(ode.size, mu), s2, b, h, 0.0)
            ab[0, grad + 1] = 0.0
            ab[1, grad] = 1.0
            ab[2, grad - 1] = -1.0
            rhs[grad] = h
            ab[1, n - 1] = 1.0
            ab[2, n - 2] = -1.0
            rhs[n - 1] = h

        v = solve_banded((2, 1), ab, rhs)
        v[0] = 0.0  # pivoting can leave rounding noise in the Dirichlet node

        new_pay = pay.copy()
        if restricted:
            slope = (v[2:] - v[:-2]) / (2.0 * h)
            new_pay[interior] = slope < 1.0
        else:
            slope = (v[2:] - v[:-2]) / (2.0 * h)
            curv = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
            ode_term = mu * slope + _fitted_diffusion(mu, s2, h) * curv - b * v[1:-1]
            grad_term = 1.0 - (v[1:-1] - v[:-2]) / h
            new_pay[interior] = grad_term > ode_term
        if np.array_equal(new_pay, pay):
            idx = int(np.argmax(pay[1:])) + 1
            return OracleResult(x, v, pay, idx, it)
        pay = new_pay

    raise OracleConvergenceError(f"policy iteration did not converge in {max_iter} iterations")
