"""Predictor-corrector sampling of the reverse-time SDE.

States carry a leading batch axis. Every sample in the batch is an independent
chain: Langevin step sizes use per-sample norms, and noise may be drawn from a
separate generator per sample (pass a list of generators) so an image's output
does not depend on what else is in the batch.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from sdesr.sde import SdeKind, _bcast, beta_of_t, integrated_beta, sigma_of_t

log = logging.getLogger(__name__)


class SamplingError(FloatingPointError):
    """Non-finite state or score during sampling."""

    def __init__(self, step, t, what="state"):
        super().__init__(f"non-finite {what} at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


class Predictor(str, enum.Enum):
    EULER_MARUYAMA = "euler_maruyama"
    REVERSE_DIFFUSION = "reverse_diffusion"


class Corrector(str, enum.Enum):
    NONE = "none"
    LANGEVIN = "langevin"


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 1000
    m_corrector: int = 0
    snr: float = 0.16
    predictor: Predictor = Predictor.EULER_MARUYAMA
    corrector: Corrector = Corrector.NONE
    denoise_final: bool = True
    clamp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictor", Predictor(self.predictor))
        object.__setattr__(self, "corrector", Corrector(self.corrector))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.m_corrector < 0:
            raise ValueError("m_corrector must be >= 0")
        if self.corrector is Corrector.LANGEVIN and not self.snr > 0:
            raise ValueError("snr must be positive for the Langevin corrector")


def normal_like(rng, shape, dtype):
    """Standard normals of ``shape``; ``rng`` may be one generator or one per sample."""
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError("need one generator per batch element")
        return np.stack([r.standard_normal(shape[1:]) for r in rng]).astype(dtype, copy=False)
    return rng.standard_normal(shape).astype(dtype, copy=False)


def _eval_score(score, x, y, t, step):
    tb = np.full(x.shape[0], float(t))
    s = np.asarray(score(x, y, tb))
    if s.shape != x.shape:
        raise ValueError(f"score returned shape {s.shape}, expected {x.shape}")
    if not np.all(np.isfinite(s)):
        raise SamplingError(step, t, "score")
    return s


def euler_maruyama_step(sde, score, x, y, t, dt, rng, step=-1):
    """One Euler-Maruyama step of the reverse SDE (``dt < 0``)."""
    s = _eval_score(score, x, y, t, step)
    g = sde.diffusion(t)
    x_mean = x + (sde.drift(x, t) - g * g * s) * dt
    return x_mean + g * np.sqrt(-dt) * normal_like(rng, x.shape, x.dtype)


def reverse_diffusion_coeffs(sde, t, dt):
    """Discrete drift factor ``k`` (``f_i = k x``) and noise scale ``G`` at ``t``.

    VE uses the variance increment between neighbouring noise levels,
    ``G**2 = sigma(t)**2 - sigma(t - |dt|)**2``. VP and subVP discretise the
    rate as ``beta_i = beta(t) |dt|`` so that ``f_i = (sqrt(1 - beta_i) - 1) x``;
    subVP additionally scales ``G**2`` by ``1 - exp(-2 int_0^t beta)``.
    """
    h = -dt
    if sde.kind is SdeKind.VE:
        s_now = sigma_of_t(sde.schedule, t)
        s_next = sigma_of_t(sde.schedule, max(t - h, 0.0))
        return 0.0, np.sqrt(max(s_now**2 - s_next**2, 0.0))
    beta_i = beta_of_t(sde.schedule, t) * h
    if beta_i >= 1.0:
        raise ValueError(f"step {h:.3g} too coarse for reverse diffusion (beta_i={beta_i:.3g} >= 1)")
    k = np.sqrt(1.0 - beta_i) - 1.0
    if sde.kind is SdeKind.SUBVP:
        beta_i = beta_i * -np.expm1(-2.0 * integrated_beta(sde.schedule, t))
    return k, np.sqrt(beta_i)


def reverse_diffusion_step(sde, score, x, y, t, dt, rng, step=-1):
    """Ancestral-style step ``x' = x - f_i + G**2 s + G z``."""
    s = _eval_score(score, x, y, t, step)
    k, big_g = reverse_diffusion_coeffs(sde, t, dt)
    x_mean = x - k * x + (big_g * big_g) * s
    return x_mean + big_g * normal_like(rng, x.shape, x.dtype)


def langevin_step_size(sde, t, snr, grad_norm, noise_norm):
    alpha = 1.0 if sde.kind is SdeKind.VE else sde.marginal_prob(t).mean_coeff ** 2
    with np.errstate(divide="ignore"):
        eps = 2.0 * alpha * (snr * noise_norm / grad_norm) ** 2
    return np.where(grad_norm > 0, eps, 0.0)


def langevin_correct(sde, score, x, y, t, snr, rng, step=-1):
    """One Langevin MCMC move ``x + eps s + sqrt(2 eps) z``.

    The step size is ``eps = 2 alpha (snr |z| / |s|)**2`` per sample, with
    ``alpha = 1`` for VE and ``m(t)**2`` otherwise. A sample whose score is
    exactly zero is left unchanged.
    """
    s = _eval_score(score, x, y, t, step)
    z = normal_like(rng, x.shape, x.dtype)
    b = x.shape[0]
    gn = np.linalg.norm(s.reshape(b, -1).astype(np.float64), axis=1)
    zn = np.linalg.norm(z.reshape(b, -1).astype(np.float64), axis=1)
    if np.any(gn == 0):
        log.debug("zero score norm at t=%g; leaving %d sample(s) unchanged", t, int(np.sum(gn == 0)))
    eps = _bcast(langevin_step_size(sde, t, snr, gn, zn), x).astype(x.dtype)
    return x + eps * s + np.sqrt(2.0 * eps) * z


def pc_sample(sde, score, y, config, rng, shape=None, dtype=None):
    """Predictor-corrector sampler.

    ``y`` is the conditioning batch, already upsampled to the output size; it
    may be ``None`` for unconditional score functions, in which case
    ``shape`` gives the batch shape. Returns the final state, clamped to
    [0, 1] when ``config.clamp`` is set.
    """
    if shape is None:
        shape = np.shape(y)
    if dtype is None:
        dtype = np.asarray(y).dtype if y is not None else np.float64
    predictor = (euler_maruyama_step if config.predictor is Predictor.EULER_MARUYAMA
                 else reverse_diffusion_step)
    use_corrector = config.corrector is Corrector.LANGEVIN and config.m_corrector > 0

    x = (normal_like(rng, tuple(shape), np.float64) * sde.prior_std).astype(dtype)
    times, dt = sde.time_grid(config.n_steps)
    for i, t in enumerate(times):
        t = float(t)
        x = predictor(sde, score, x, y, t, dt, rng, step=i)
        if use_corrector:
            tc = max(t + dt, sde.t_min)
            for _ in range(config.m_corrector):
                x = langevin_correct(sde, score, x, y, tc, config.snr, rng, step=i)
        if not np.all(np.isfinite(x)):
            raise SamplingError(i, t)
    if config.denoise_final:
        s = _eval_score(score, x, y, sde.t_min, config.n_steps)
        mm = sde.marginal_prob(sde.t_min)
        x = ((x + mm.std**2 * s) / mm.mean_coeff).astype(dtype)
    if config.clamp:
        x = np.clip(x, 0.0, 1.0)
    return x
