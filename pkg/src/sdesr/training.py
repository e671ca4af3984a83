"""Degradation, denoising score matching, Adam and the training loop."""

import csv
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from sdesr.dataio import Checkpoint
from sdesr.denoiser import Architecture, DenoiserNet
from sdesr.imaging import downsample_area, resize_bicubic
from sdesr.sde import NoiseSchedule, SdeKind, SdeModel, _bcast, make_rng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


class LambdaMode(str, enum.Enum):
    STD_SQUARED = "std2"
    CONSTANT = "const"


# ---------------------------------------------------------------------------
# degradation


@dataclass(frozen=True)
class DegradationSpec:
    factor: int = 4
    down_method: str = "area"
    up_method: str = "bicubic"

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError("factor must be >= 2")
        if self.down_method not in ("area", "bicubic"):
            raise ValueError(f"unknown down_method {self.down_method!r}")
        if self.up_method != "bicubic":
            raise ValueError(f"unknown up_method {self.up_method!r}")


def downsample(img, spec):
    img = np.asarray(img)
    h, w = img.shape[-3], img.shape[-2]
    if h % spec.factor or w % spec.factor:
        raise ValueError(f"image {h}x{w} not divisible by factor {spec.factor}")
    if spec.down_method == "area":
        return downsample_area(img, spec.factor)
    return np.clip(resize_bicubic(img, (h // spec.factor, w // spec.factor)), 0.0, 1.0)


def upsample(img, spec):
    img = np.asarray(img)
    h, w = img.shape[-3], img.shape[-2]
    return np.clip(resize_bicubic(img, (h * spec.factor, w * spec.factor)), 0.0, 1.0)


def degrade(x_hr, spec):
    """Return ``(y_lr, y_up)`` for an ``(..., H, W, C)`` image or batch."""
    y_lr = downsample(x_hr, spec)
    return y_lr, upsample(y_lr, spec)


# ---------------------------------------------------------------------------
# denoising score matching


def _perturb(sde, x0, rng):
    b = x0.shape[0]
    t = rng.uniform(sde.t_min, sde.t_max, size=b)
    z = rng.standard_normal(x0.shape).astype(x0.dtype)
    mm = sde.marginal_prob(t)
    m = _bcast(mm.mean_coeff, x0).astype(x0.dtype)
    std = _bcast(mm.std, x0).astype(x0.dtype)
    return t, z, std, m * x0 + std * z


def _residual(score, z, std, mode):
    if LambdaMode(mode) is LambdaMode.STD_SQUARED:
        return std * score + z
    return score + z / std


def dsm_loss(score_fn, sde, x0, y_up, rng, lambda_mode=LambdaMode.STD_SQUARED):
    """Monte-Carlo DSM objective over a batch (mean over the leading axis).

    With ``x_t = m x0 + std z`` the kernel score is ``-z / std``. Weighting by
    ``std**2`` turns each summand into ``|std * s + z|**2``.
    """
    x0 = np.asarray(x0)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    t, z, std, xt = _perturb(sde, x0, rng)
    r = _residual(score_fn(xt, y_up, t), z, std, lambda_mode)
    per = np.sum(r.reshape(r.shape[0], -1).astype(np.float64) ** 2, axis=1)
    loss = float(per.mean())
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite DSM loss at t={t[~np.isfinite(per)]}")
    return loss


def dsm_loss_and_grad(model, sde, x0, y_up, rng, lambda_mode=LambdaMode.STD_SQUARED):
    """Loss and parameter gradients for a model exposing ``forward``/``backward``."""
    x0 = np.asarray(x0)
    b = x0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    t, z, std, xt = _perturb(sde, x0, rng)
    score, cache = model.forward(xt, y_up, t)
    r = _residual(score, z, std, lambda_mode)
    per = np.sum(r.reshape(b, -1).astype(np.float64) ** 2, axis=1)
    loss = float(per.mean())
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite DSM loss at t={t[~np.isfinite(per)]}")
    scale = std if LambdaMode(lambda_mode) is LambdaMode.STD_SQUARED else 1.0
    dscore = (2.0 / b) * r * scale
    return loss, model.backward(cache, dscore)


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, arrays, t):
        for k in self.m:
            self.m[k][...] = arrays[f"adam.m.{k}"]
            self.v[k][...] = arrays[f"adam.v.{k}"]
        self.t = int(t)


def clip_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        s = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= s
    return total


def warmup_lr(step, learning_rate, warmup_steps):
    """Learning rate for the (1-based) update ``step`` under linear warm-up."""
    if warmup_steps <= 0:
        return learning_rate
    return learning_rate * min(step / warmup_steps, 1.0)


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 16
    learning_rate: float = 2e-4
    warmup_steps: int = 5000
    lambda_mode: str = "std2"
    grad_clip: float = 1.0
    seed: int = 0
    sde_kind: str = "ve"
    sigma_min: float = 0.01
    sigma_max: float = 348.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-5
    factor: int = 4
    down_method: str = "area"
    log_every: int = 100
    checkpoint_every: int = 5000
    ema_decay: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            self.grad_clip = None
        LambdaMode(self.lambda_mode)
        SdeKind(self.sde_kind)

    def sde(self):
        sched = NoiseSchedule(self.sigma_min, self.sigma_max, self.beta_min, self.beta_max)
        return SdeModel(SdeKind(self.sde_kind), sched, t_min=self.t_min)

    def degradation(self):
        return DegradationSpec(self.factor, self.down_method)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name in d:
                raw = d[f.name]
                if f.name == "grad_clip" and str(raw).lower() in ("none", "", "0"):
                    kw[f.name] = None
                else:
                    kw[f.name] = type(f.default)(raw) if not isinstance(raw, type(f.default)) else raw
        return cls(**kw)


@dataclass
class TrainState:
    step: int = 0
    losses: list = field(default_factory=list)
    ema: dict = None


def train(config, images, model, *, state=None, optimizer=None, out_dir=None, on_checkpoint=None):
    """Run ``config.steps`` DSM updates on ``model`` (in place).

    ``images`` is an ``(N, H, W, C)`` array of high-resolution targets. Each
    step draws its batch, times and noise from a generator seeded by
    ``(config.seed, step)``, so a resumed run replays the same stream.
    Returns the :class:`TrainState`; ``state.losses`` holds one per-step loss.
    If ``out_dir`` is given, window-mean losses are appended to
    ``loss.csv`` every ``log_every`` steps and ``on_checkpoint(state, opt)``
    is invoked every ``checkpoint_every`` steps and at the end.
    """
    sde = config.sde()
    spec = config.degradation()
    state = state or TrainState()
    opt = optimizer or Adam(model.params)
    if config.ema_decay > 0 and state.ema is None:
        state.ema = {k: v.copy() for k, v in model.params.items()}
    dtype = next(iter(model.params.values())).dtype
    window = deque(maxlen=200)
    csv_fh = writer = None
    if out_dir is not None:
        path = Path(out_dir) / "loss.csv"
        new = not path.exists() or state.step == 0
        csv_fh = open(path, "w" if new else "a", newline="")
        writer = csv.writer(csv_fh)
        if new:
            writer.writerow(["step", "loss", "lr"])
    try:
        while state.step < config.steps:
            step = state.step + 1
            rng = make_rng(config.seed, step)
            idx = rng.integers(0, images.shape[0], size=config.batch_size)
            x0 = images[idx].astype(dtype)
            _, y_up = degrade(x0, spec)
            loss, grads = dsm_loss_and_grad(model, sde, x0, y_up.astype(dtype), rng, config.lambda_mode)
            med = float(np.median(window)) if len(window) >= 50 else None
            if med is not None and loss > 1e3 * med:
                raise DivergenceError(f"step {step}: loss {loss:.4g} exceeds 1000x running median {med:.4g}")
            window.append(loss)
            for g in grads.values():
                if not np.all(np.isfinite(g)):
                    raise DivergenceError(f"step {step}: non-finite gradient")
            clip_global_norm(grads, config.grad_clip)
            lr = warmup_lr(step, config.learning_rate, config.warmup_steps)
            opt.step(model.params, grads, lr)
            if state.ema is not None:
                for k, v in model.params.items():
                    state.ema[k] *= config.ema_decay
                    state.ema[k] += (1 - config.ema_decay) * v
            state.step = step
            state.losses.append(loss)
            if writer is not None and step % config.log_every == 0:
                writer.writerow([step, f"{np.mean(state.losses[-config.log_every:]):.6g}", f"{lr:.6g}"])
                csv_fh.flush()
                log.info("step %d loss %.4f lr %.2e", step, np.mean(state.losses[-config.log_every:]), lr)
            if on_checkpoint is not None and (step % config.checkpoint_every == 0 or step == config.steps):
                on_checkpoint(state, opt)
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return state


# ---------------------------------------------------------------------------
# checkpoint conversion


def make_checkpoint(net, config, state, optimizer=None):
    meta = {f"train.{k}": v for k, v in config.as_dict().items()}
    meta.update({f"arch.{k}": v for k, v in net.arch.as_dict().items()})
    meta.update({
        "sde.kind": net.sde.kind.value,
        "sde.sigma_min": repr(net.sde.schedule.sigma_min),
        "sde.sigma_max": repr(net.sde.schedule.sigma_max),
        "sde.beta_min": repr(net.sde.schedule.beta_min),
        "sde.beta_max": repr(net.sde.schedule.beta_max),
        "sde.t_min": repr(net.sde.t_min),
        "step": state.step,
        "seed": config.seed,
    })
    arrays = {f"param.{k}": v for k, v in net.params.items()}
    if state.ema is not None:
        arrays.update({f"ema.{k}": v for k, v in state.ema.items()})
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        meta["adam.t"] = optimizer.t
    return Checkpoint(meta, arrays)


def sde_from_meta(meta):
    sched = NoiseSchedule(float(meta["sde.sigma_min"]), float(meta["sde.sigma_max"]),
                          float(meta["sde.beta_min"]), float(meta["sde.beta_max"]))
    return SdeModel(SdeKind(meta["sde.kind"]), sched, t_min=float(meta["sde.t_min"]))


def net_from_checkpoint(ckpt, use_ema=True):
    """Rebuild the network (EMA weights when present and ``use_ema``)."""
    arch = Architecture.from_dict({k[5:]: v for k, v in ckpt.meta.items() if k.startswith("arch.")})
    prefix = "ema." if use_ema and any(k.startswith("ema.") for k in ckpt.arrays) else "param."
    params = {k[len(prefix):]: v for k, v in ckpt.arrays.items() if k.startswith(prefix)}
    return DenoiserNet(sde_from_meta(ckpt.meta), arch, params=params)


def config_from_checkpoint(ckpt):
    return TrainConfig.from_dict({k[6:]: v for k, v in ckpt.meta.items() if k.startswith("train.")})
