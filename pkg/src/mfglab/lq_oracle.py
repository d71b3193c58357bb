"""Closed-form ground truth for the linear-quadratic cost family.

With terminal cost q (x - kappa mean(m))^2 / 2 the equilibrium feedback
field is affine, U(t, x, m) = a(t) x + b(t) mean(m), with

    a(t) = q / (1 + q (T - t)),
    s(t) = rho / (1 + rho (T - t)),   rho = q (1 - kappa),
    b(t) = s(t) - a(t),

where s = a + b is the mean-reversion rate of the conditional mean.  The
coefficients solve a' = a^2, s' = s^2 backward from a(T) = q,
s(T) = q (1 - kappa); the module always cross-integrates these ODEs with
RK4 (on a grid of at least 1000 steps so the tolerance is meaningful at
coarse caller grids) and refuses to return formulas that disagree beyond
1e-8.

The coefficients carry no dependence on the common-noise intensity, so
the same field is the exact equilibrium feedback for every eps >= 0; that
exactness is what makes this family the package-wide oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ConfigurationError, DomainError
from .measure import mean_of

__all__ = [
    "RiccatiSolution",
    "solve_riccati",
    "u_eps",
    "exact_flow_mean",
    "exact_variational_law",
]


@dataclass(frozen=True)
class RiccatiSolution:
    """Coefficient tables on a uniform time grid, plus the defining data.

    a multiplies the state, b the flow mean, and s = a + b pulls the
    conditional mean toward zero.  q, kappa, horizon are kept so the
    closed forms can also be evaluated off-grid.
    """

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    s: np.ndarray
    q: float
    kappa: float
    horizon: float
    rk_error: float

    @property
    def rho(self) -> float:
        return self.q * (1.0 - self.kappa)

    def a_at(self, t):
        return self.q / (1.0 + self.q * (self.horizon - np.asarray(t, dtype=float)))

    def s_at(self, t):
        tau = self.horizon - np.asarray(t, dtype=float)
        return self.rho / (1.0 + self.rho * tau)

    def b_at(self, t):
        return self.s_at(t) - self.a_at(t)


def _rk4_backward(rhs, terminal, times):
    """Backward RK4 for y' = rhs(y) with y(times[-1]) = terminal."""
    y = np.empty_like(times)
    y[-1] = terminal
    for k in range(len(times) - 1, 0, -1):
        h = times[k - 1] - times[k]  # negative step
        yk = y[k]
        k1 = rhs(yk)
        k2 = rhs(yk + 0.5 * h * k1)
        k3 = rhs(yk + 0.5 * h * k2)
        k4 = rhs(yk + h * k3)
        y[k - 1] = yk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def solve_riccati(q: float, kappa: float, horizon: float, nt: int) -> RiccatiSolution:
    """Analytic Riccati coefficients on a uniform grid of nt steps.

    kappa > 1 loses weak monotonicity and the mean-reversion coefficient
    can blow up in finite time, so it is rejected.
    """
    if q <= 0:
        raise DomainError(f"need q > 0, got {q}")
    if nt < 2:
        raise DomainError(f"need nt >= 2, got {nt}")
    if horizon <= 0:
        raise DomainError(f"need horizon > 0, got {horizon}")
    if kappa > 1:
        raise AssumptionError(
            f"kappa = {kappa} > 1 breaks weak monotonicity; the mean "
            "reversion rate s' = s^2 can blow up before time 0")
    times = np.linspace(0.0, horizon, nt + 1)
    tau = horizon - times
    rho = q * (1.0 - kappa)
    a = q / (1.0 + q * tau)
    s = rho / (1.0 + rho * tau)
    b = s - a

    # independent RK4 integration guards the derived closed forms
    nt_check = max(nt, 1000)
    t_check = np.linspace(0.0, horizon, nt_check + 1)
    sq = lambda y: y * y
    a_rk = _rk4_backward(sq, q, t_check)
    s_rk = _rk4_backward(sq, rho, t_check)
    tau_c = horizon - t_check
    err = max(float(np.max(np.abs(a_rk - q / (1.0 + q * tau_c)))),
              float(np.max(np.abs(s_rk - rho / (1.0 + rho * tau_c)))))
    if err > 1e-8:
        raise ArithmeticError(
            f"closed-form Riccati coefficients disagree with RK4 by {err}")
    return RiccatiSolution(times=times, a=a, b=b, s=s, q=q, kappa=kappa,
                           horizon=horizon, rk_error=err)


def u_eps(t: float, x, m, r: RiccatiSolution):
    """Equilibrium feedback-field value a(t) x + b(t) mean(m).

    Valid for every common-noise intensity: the LQ coefficients carry no
    eps dependence (structurally — there is no eps argument to pass).
    m may be a measure or a bare real mean.
    """
    if not (0.0 <= t <= r.horizon):
        raise DomainError(f"t = {t} outside [0, {r.horizon}]")
    return r.a_at(t) * np.asarray(x, dtype=float) + r.b_at(t) * mean_of(m)


def exact_flow_mean(m0_mean: float, eps: float, r: RiccatiSolution,
                    wtilde_increments=None) -> np.ndarray:
    """Conditional-mean path for d mbar = -s(t) mbar dt + eps dWtilde.

    Exact exponential integrator: over each grid step the decay factor is
    (1 + rho (T - t_{k+1})) / (1 + rho (T - t_k)) in closed form, and the
    common-noise increment enters at the end of the step (the same
    convention the tree solver uses for its translation splitting).  With
    eps = 0 this reproduces the closed-form decay
    mbar_t = mbar_0 (1 + rho (T - t)) / (1 + rho T) to roundoff.
    """
    nt = len(r.times) - 1
    if wtilde_increments is None:
        wtilde_increments = np.zeros(nt)
    w = np.asarray(wtilde_increments, dtype=float)
    if w.shape != (nt,):
        raise ConfigurationError(
            f"need {nt} increments for {nt + 1} grid times, got shape {w.shape}")
    tau = r.horizon - r.times
    decay = 1.0 + r.rho * tau
    out = np.empty(nt + 1)
    out[0] = m0_mean
    for k in range(nt):
        out[k + 1] = (decay[k + 1] / decay[k]) * out[k] + eps * w[k]
    return out


def exact_variational_law(r: RiccatiSolution) -> np.ndarray:
    """Variance curve of the correction driver dU = -s(t) U dt + dWtilde.

    Time-varying Ornstein-Uhlenbeck with U_0 = 0:

        Var U_t = (1 + rho (T-t))^2 * (1/rho) [ 1/(1 + rho (T-t)) - 1/(1 + rho T) ]

    degenerating to Var U_t = t when rho = 0 (pure Brownian motion).  The
    companion process is V_t = s(t) U_t.
    """
    tau = r.horizon - r.times
    if r.rho == 0.0:
        return r.times.copy()
    d_t = 1.0 + r.rho * tau
    d_0 = 1.0 + r.rho * r.horizon
    return d_t * d_t * (1.0 / r.rho) * (1.0 / d_t - 1.0 / d_0)
