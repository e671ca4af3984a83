"""VE, VP and sub-VP forward SDEs with their perturbation kernels.

All three families have an affine drift ``f(x, t) = a(t) x`` so the
perturbation kernel ``p(x_t | x_0)`` is Gaussian with mean ``m(t) x_0`` and
isotropic standard deviation ``std(t)``:

======  ==================  ====================================
kind    m(t)                std(t)**2
======  ==================  ====================================
VE      1                   sigma(t)**2 - sigma(0)**2
VP      exp(-B(t) / 2)      1 - exp(-B(t))
subVP   exp(-B(t) / 2)      (1 - exp(-B(t)))**2
======  ==================  ====================================

with ``B(t) = int_0^t beta(s) ds``. The VP/subVP variances use the full
``exp(-B)`` exponent; that is the form the moment ODEs integrate to (see
:func:`integrate_moment_odes` and ``tests/test_sde.py``).
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from sdesr.kernels import affine_em


class DomainError(ValueError):
    """Raised when a time argument falls outside the schedule's domain."""


class SdeKind(str, enum.Enum):
    VE = "ve"
    VP = "vp"
    SUBVP = "subvp"


def make_rng(seed, *stream):
    """Seeded generator; extra integers select an independent sub-stream."""
    if stream:
        return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))
    return np.random.default_rng(int(seed))


def _check_unit(t):
    ta = np.asarray(t, dtype=np.float64)
    if np.any(ta < 0.0) or np.any(ta > 1.0) or not np.all(np.isfinite(ta)):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return ta


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 348.0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if min(self.sigma_min, self.sigma_max, self.beta_min, self.beta_max) <= 0:
            raise ValueError("schedule parameters must be strictly positive")
        if not self.sigma_min < self.sigma_max:
            raise ValueError("need sigma_min < sigma_max")
        if not self.beta_min < self.beta_max:
            raise ValueError("need beta_min < beta_max")


def sigma_of_t(schedule, t):
    """Geometric VE noise level ``sigma_min * (sigma_max / sigma_min) ** t``."""
    ta = _check_unit(t)
    out = schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** ta
    return float(out) if out.ndim == 0 else out


def beta_of_t(schedule, t):
    """Affine VP rate ``beta_min + (beta_max - beta_min) * t``."""
    ta = _check_unit(t)
    out = schedule.beta_min + (schedule.beta_max - schedule.beta_min) * ta
    return float(out) if out.ndim == 0 else out


def integrated_beta(schedule, t):
    """Closed form of ``int_0^t beta(s) ds`` for the affine schedule."""
    ta = _check_unit(t)
    out = schedule.beta_min * ta + 0.5 * (schedule.beta_max - schedule.beta_min) * ta**2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MarginalMoments:
    """Mean coefficient ``m(t)`` and standard deviation of ``p(x_t | x_0)``."""

    mean_coeff: object
    std: object


def _bcast(t, x):
    """Reshape per-sample times ``(B,)`` so they broadcast against ``x``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (np.ndim(x) - t.ndim))


@dataclass(frozen=True)
class SdeModel:
    kind: SdeKind
    schedule: NoiseSchedule = NoiseSchedule()
    t_min: float = 1e-5
    t_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SdeKind(self.kind))
        if not 0.0 < self.t_min < self.t_max <= 1.0:
            raise ValueError(f"need 0 < t_min < t_max <= 1, got {self.t_min}, {self.t_max}")

    # -- coefficients -------------------------------------------------------

    def drift_coeff(self, t):
        """``a(t)`` in ``f(x, t) = a(t) x``."""
        if self.kind is SdeKind.VE:
            return np.zeros_like(_check_unit(t)) + 0.0
        return -0.5 * np.asarray(beta_of_t(self.schedule, t))

    def drift(self, x, t):
        x = np.asarray(x)
        return (_bcast(self.drift_coeff(t), x) * x).astype(x.dtype, copy=False)

    def diffusion(self, t):
        s = self.schedule
        if self.kind is SdeKind.VE:
            g = np.asarray(sigma_of_t(s, t)) * math.sqrt(2.0 * math.log(s.sigma_max / s.sigma_min))
        elif self.kind is SdeKind.VP:
            g = np.sqrt(np.asarray(beta_of_t(s, t)))
        else:
            b = np.asarray(beta_of_t(s, t))
            g = np.sqrt(b * -np.expm1(-2.0 * np.asarray(integrated_beta(s, t))))
        return float(g) if g.ndim == 0 else g

    def marginal_prob(self, t):
        s = self.schedule
        if self.kind is SdeKind.VE:
            sig = np.asarray(sigma_of_t(s, t))
            mean = np.ones_like(sig)
            std = np.sqrt(sig**2 - s.sigma_min**2)
        else:
            big_b = np.asarray(integrated_beta(s, t))
            mean = np.exp(-0.5 * big_b)
            one_minus = -np.expm1(-big_b)
            std = np.sqrt(one_minus) if self.kind is SdeKind.VP else one_minus
        if mean.ndim == 0:
            return MarginalMoments(float(mean), float(std))
        return MarginalMoments(mean, std)

    # -- prior --------------------------------------------------------------

    @property
    def prior_std(self):
        return self.schedule.sigma_max if self.kind is SdeKind.VE else 1.0

    def prior_sample(self, shape, rng, dtype=np.float64):
        return (rng.standard_normal(shape) * self.prior_std).astype(dtype, copy=False)

    def time_grid(self, n_steps):
        """Descending grid on ``[t_min, t_max]`` and the (negative) step ``dt``."""
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        return np.linspace(self.t_max, self.t_min, n_steps), -(self.t_max - self.t_min) / n_steps


def integrate_moment_odes(model, t, n_steps=10_000):
    """RK4 integration of the mean/variance ODEs of a scalar affine SDE.

    Starts from ``x(0) = 1`` exactly (mean 1, variance 0) and integrates

        d mean / dt = a(s) mean
        d var  / dt = 2 a(s) var + g(s)**2

    up to ``t``. Serves as an oracle for :meth:`SdeModel.marginal_prob`, so it
    avoids every closed form used there: ``g**2`` for VE is a centred
    difference of ``sigma(s)**2`` and the subVP exponent ``int beta`` is
    carried as a third ODE component.
    """
    if n_steps < 100:
        raise ValueError("n_steps must be >= 100")
    sch = model.schedule
    kind = model.kind
    t = float(t)
    if t == 0.0:
        return MarginalMoments(1.0, 0.0)

    def beta(s):
        return sch.beta_min + (sch.beta_max - sch.beta_min) * s

    def sig2(s):
        return (sch.sigma_min * (sch.sigma_max / sch.sigma_min) ** s) ** 2

    def rhs(s, y):
        mean, var, big_b = y
        if kind is SdeKind.VE:
            h = 1e-6
            g2 = (sig2(s + h) - sig2(s - h)) / (2 * h)
            a = 0.0
        else:
            a = -0.5 * beta(s)
            g2 = beta(s) if kind is SdeKind.VP else beta(s) * (1.0 - math.exp(-2.0 * big_b))
        return np.array([a * mean, 2.0 * a * var + g2, beta(s)])

    y = np.array([1.0, 0.0, 0.0])
    h = t / n_steps
    s = 0.0
    for _ in range(n_steps):
        k1 = rhs(s, y)
        k2 = rhs(s + h / 2, y + h / 2 * k1)
        k3 = rhs(s + h / 2, y + h / 2 * k2)
        k4 = rhs(s + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return MarginalMoments(float(y[0]), float(math.sqrt(max(y[1], 0.0))))


def simulate_forward(model, x0, t_out, n_paths, n_steps, rng, antithetic=False):
    """Euler-Maruyama paths of the forward SDE from a scalar start ``x0``.

    Integrates on a uniform grid over ``[0, max(t_out)]`` and returns an array
    of shape ``(len(t_out), n_paths)`` with the state at each requested time
    (each must land on a grid point). With ``antithetic`` the second half of
    the paths reuses the first half's increments with flipped sign, which
    removes the Monte Carlo error from the sample mean of an affine SDE.
    """
    t_out = np.atleast_1d(np.asarray(t_out, dtype=np.float64))
    t_end = float(t_out.max())
    dt = t_end / n_steps
    save_at = np.rint(t_out / dt).astype(np.int64)
    if not np.allclose(save_at * dt, t_out, atol=1e-9):
        raise ValueError("requested times must lie on the integration grid")
    order = np.argsort(save_at, kind="stable")
    grid = np.arange(n_steps) * dt
    a = np.asarray(model.drift_coeff(grid), dtype=np.float64)
    g = np.asarray(model.diffusion(grid), dtype=np.float64)
    if antithetic:
        if n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        half = rng.standard_normal((n_steps, n_paths // 2))
        z = np.concatenate([half, -half], axis=1)
    else:
        z = rng.standard_normal((n_steps, n_paths))
    snaps = affine_em(np.full(n_paths, float(x0)), a, g, dt, z, save_at[order])
    out = np.empty_like(snaps)
    out[order] = snaps
    return out
