"""Score functions: the analytic Gaussian oracle and a trainable linear family.

A score function is any callable ``score(x, y, t) -> array`` returning an
array shaped like ``x``. ``y`` is the conditioning image (ignored by the
Gaussian models) and ``t`` is either a scalar or one time per leading batch
entry. :class:`sdesr.denoiser.DenoiserNet` is the image-scale implementation.
"""

from dataclasses import dataclass

import numpy as np

from sdesr.denoiser import DenoiserNet, time_embedding  # noqa: F401  (re-export)
from sdesr.sde import _bcast


@dataclass(frozen=True)
class GaussianDataSpec:
    """Isotropic Gaussian data distribution ``N(mean, variance * I)``."""

    mean: tuple
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in np.atleast_1d(self.mean)))

    def sample(self, n, rng):
        mu = np.asarray(self.mean)
        return mu + np.sqrt(self.variance) * rng.standard_normal((n, mu.size))

    def marginal(self, sde, t):
        """Mean vector and per-coordinate variance of the perturbed marginal."""
        mm = sde.marginal_prob(t)
        m = np.asarray(mm.mean_coeff)
        return m[..., None] * np.asarray(self.mean), m**2 * self.variance + np.asarray(mm.std) ** 2


def analytic_gaussian_score(spec, sde, x, t):
    """Exact score of ``p_t`` when the data are ``N(mean, variance * I)``.

    ``x`` has the data dimension on its last axis; ``t`` is a scalar or has
    one entry per leading batch element.
    """
    x = np.asarray(x, dtype=np.float64)
    mm = sde.marginal_prob(t)
    m = _bcast(mm.mean_coeff, x)
    var = m**2 * spec.variance + _bcast(mm.std, x) ** 2
    return -(x - m * np.asarray(spec.mean)) / var


def gaussian_log_density(spec, sde, x, t):
    """Log density of the perturbed marginal at ``x`` (last axis = data dim)."""
    x = np.asarray(x, dtype=np.float64)
    mu, var = spec.marginal(sde, t)
    d = x.shape[-1]
    return -0.5 * (np.sum((x - mu) ** 2, axis=-1) / var + d * np.log(2 * np.pi * var))


class GaussianScoreFn:
    """Adapter exposing the analytic oracle through the ``(x, y, t)`` contract."""

    def __init__(self, spec, sde):
        self.spec = spec
        self.sde = sde

    def __call__(self, x, y, t):
        return analytic_gaussian_score(self.spec, self.sde, x, t)


class LinearGaussianScore:
    """Score family linear in ``x``: ``s(x, t) = -(x - m(t) mu) / (m(t)^2 v + std(t)^2)``.

    The trainable parameters are ``mu`` and ``log_v``. When the data are
    Gaussian the true score is a member of this family, so denoising score
    matching must recover the data mean and variance. Slope and intercept at
    time ``t`` are ``-1/D`` and ``m mu / D`` with ``D = m^2 v + std^2``.
    """

    def __init__(self, sde, mean=0.0, variance=1.0, dim=1):
        self.sde = sde
        self.params = {
            "mu": np.full(dim, float(mean)),
            "log_v": np.array([np.log(variance)]),
        }

    def coefficients(self, t):
        mm = self.sde.marginal_prob(t)
        m = np.asarray(mm.mean_coeff)
        d = m**2 * np.exp(self.params["log_v"][0]) + np.asarray(mm.std) ** 2
        return -1.0 / d, m[..., None] * self.params["mu"] / d[..., None]

    def forward(self, x, y, t):
        x = np.asarray(x, dtype=np.float64)
        mm = self.sde.marginal_prob(t)
        m = _bcast(mm.mean_coeff, x)
        v = np.exp(self.params["log_v"][0])
        d = m**2 * v + _bcast(mm.std, x) ** 2
        r = x - m * self.params["mu"]
        return -r / d, (m, v, d, r)

    def __call__(self, x, y, t):
        return self.forward(x, y, t)[0]

    def backward(self, cache, dscore):
        m, v, d, r = cache
        d_mu = np.sum(dscore * m / d, axis=tuple(range(dscore.ndim - 1)))
        d_logv = np.sum(dscore * r * m**2 * v / d**2)
        return {"mu": d_mu, "log_v": np.array([d_logv])}
