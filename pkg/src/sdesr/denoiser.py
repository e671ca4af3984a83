"""Small conditional U-Net in numpy with hand-written backpropagation.

Layout is NHWC. The network sees the noisy state concatenated with the
upsampled low-resolution guide and predicts the scaled noise ``eps``; the
score is ``-eps / std(t)``.

    space-to-depth -> in-conv -> res(w0) ---------------------------+
                                   |                                |
                                avgpool -> conv(w1) -> res(w1)      |
                                                         |          |
                                       conv(w0) -> nearest-up --(add) -> res(w0)
                                                                          |
                                              depth-to-space <- out-conv -+

Every residual block receives the time embedding through a learned affine
map added after its first convolution. The space-to-depth stem (``patch``)
folds ``patch x patch`` pixel blocks into channels so both levels run at
reduced resolution; ``patch=1`` gives a plain full-resolution network.
"""

from dataclasses import dataclass

import numpy as np

from sdesr.kernels import col2im3x3, im2col3x3
from sdesr.sde import _bcast


class ContractError(ValueError):
    """Inputs violate the shape contract of the network."""


def time_embedding(t, dim):
    """Sinusoidal features of ``t``, interleaved ``(sin, cos, sin, cos, ...)``.

    Frequencies are geometrically spaced from 1000 down to 0.1 rad per unit
    time so neighbouring points of a 1000-step grid stay distinguishable.
    """
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = 1000.0 * np.exp(-np.log(10_000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.empty((t.shape[0], dim))
    emb[:, 0::2] = np.sin(ang)
    emb[:, 1::2] = np.cos(ang)
    return emb


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    s = _sigmoid(x)
    return x * s, s


def _silu_bwd(x, s, dy):
    return dy * s * (1.0 + x * (1.0 - s))


def space_to_depth(x, p):
    if p == 1:
        return x
    b, h, w, c = x.shape
    return x.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h // p, w // p, p * p * c)


def depth_to_space(x, p):
    if p == 1:
        return x
    b, h, w, cp = x.shape
    c = cp // (p * p)
    return x.reshape(b, h, w, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h * p, w * p, c)


def _pad1(x):
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    return xp


@dataclass(frozen=True)
class Architecture:
    channels: int = 1
    widths: tuple = (32, 64)
    temb_dim: int = 32
    temb_hidden: int = 64
    patch: int = 2

    def as_dict(self):
        return {
            "channels": self.channels,
            "widths": ",".join(map(str, self.widths)),
            "temb_dim": self.temb_dim,
            "temb_hidden": self.temb_hidden,
            "patch": self.patch,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            channels=int(d["channels"]),
            widths=tuple(int(v) for v in str(d["widths"]).split(",")),
            temb_dim=int(d["temb_dim"]),
            temb_hidden=int(d["temb_hidden"]),
            patch=int(d.get("patch", 1)),
        )


class DenoiserNet:
    """Conditional noise-prediction network; callable as a score function."""

    def __init__(self, sde, arch=Architecture(), seed=0, dtype=np.float32, params=None):
        self.sde = sde
        self.arch = arch
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}

    # -- parameters ---------------------------------------------------------

    def _init_params(self, rng):
        c = self.arch.channels * self.arch.patch**2
        w0, w1 = self.arch.widths
        td, th = self.arch.temb_dim, self.arch.temb_hidden
        p = {}

        def conv(name, cin, cout, zero=False):
            fan_in = 9 * cin
            p[name + ".w"] = np.zeros((fan_in, cout)) if zero else rng.standard_normal((fan_in, cout)) / np.sqrt(fan_in)
            p[name + ".b"] = np.zeros(cout)

        def dense(name, cin, cout):
            p[name + ".w"] = rng.standard_normal((cin, cout)) / np.sqrt(cin)
            p[name + ".b"] = np.zeros(cout)

        def res(name, ch):
            conv(name + ".c1", ch, ch)
            dense(name + ".t", th, ch)
            conv(name + ".c2", ch, ch)

        dense("temb", td, th)
        conv("in", 2 * c, w0)
        res("enc", w0)
        conv("down", w0, w1)
        res("mid", w1)
        conv("up", w1, w0)
        res("dec", w0)
        conv("out", w0, c, zero=True)
        return p

    def n_params(self):
        return sum(v.size for v in self.params.values())

    # -- layers -------------------------------------------------------------

    def _conv(self, name, x):
        cols = im2col3x3(_pad1(x))
        w = self.params[name + ".w"]
        out = cols.reshape(-1, cols.shape[-1]) @ w + self.params[name + ".b"]
        return out.reshape(x.shape[:3] + (w.shape[1],)), cols

    def _conv_bwd(self, name, cols, dout, grads):
        w = self.params[name + ".w"]
        d2 = dout.reshape(-1, dout.shape[-1])
        grads[name + ".w"] = cols.reshape(-1, cols.shape[-1]).T @ d2
        grads[name + ".b"] = d2.sum(axis=0)
        dcols = (d2 @ w.T).reshape(cols.shape)
        return col2im3x3(dcols)[:, 1:-1, 1:-1, :]

    def _res(self, name, x, temb):
        a1, s1 = _silu(x)
        h1, cols1 = self._conv(name + ".c1", a1)
        h1 = h1 + (temb @ self.params[name + ".t.w"] + self.params[name + ".t.b"])[:, None, None, :]
        a2, s2 = _silu(h1)
        h2, cols2 = self._conv(name + ".c2", a2)
        return x + h2, (x, s1, cols1, h1, s2, cols2)

    def _res_bwd(self, name, cache, dout, temb, grads):
        x, s1, cols1, h1, s2, cols2 = cache
        da2 = self._conv_bwd(name + ".c2", cols2, dout, grads)
        dh1 = _silu_bwd(h1, s2, da2)
        dt = dh1.sum(axis=(1, 2))
        grads[name + ".t.w"] = temb.T @ dt
        grads[name + ".t.b"] = dt.sum(axis=0)
        dtemb = dt @ self.params[name + ".t.w"].T
        da1 = self._conv_bwd(name + ".c1", cols1, dh1, grads)
        return dout + _silu_bwd(x, s1, da1), dtemb

    # -- forward / backward -------------------------------------------------

    def _check(self, x, y):
        if x.ndim != 4 or x.shape != y.shape:
            raise ContractError(f"expected matching (B, H, W, C) inputs, got {x.shape} and {y.shape}")
        if x.shape[-1] != self.arch.channels:
            raise ContractError(f"expected {self.arch.channels} channels, got {x.shape[-1]}")
        q = 2 * self.arch.patch
        if x.shape[1] % q or x.shape[2] % q:
            raise ContractError(f"spatial size must be divisible by {q}")

    def input_scale(self, t):
        mm = self.sde.marginal_prob(t)
        return 1.0 / np.sqrt(np.asarray(mm.mean_coeff) ** 2 + np.asarray(mm.std) ** 2)

    def predict_eps(self, x, y, t, keep_cache=False):
        """Raw noise prediction for a batch ``(B, H, W, C)``; ``t`` is ``(B,)``."""
        x = np.asarray(x)
        y = np.asarray(y)
        squeeze = x.ndim == 3
        if squeeze:
            x, y = x[None], y[None]
        self._check(x, y)
        b = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        dt = self.dtype
        p = self.params

        xin = np.concatenate([(_bcast(self.input_scale(t), x) * x), 2.0 * y - 1.0], axis=-1).astype(dt)
        emb = time_embedding(t, self.arch.temb_dim).astype(dt)
        tpre = emb @ p["temb.w"] + p["temb.b"]
        temb, ts = _silu(tpre)

        h0, c_in = self._conv("in", space_to_depth(xin, self.arch.patch))
        e, r_enc = self._res("enc", h0, temb)
        bb, hh, ww, cc = e.shape
        pooled = e.reshape(bb, hh // 2, 2, ww // 2, 2, cc).mean(axis=(2, 4))
        d, c_down = self._conv("down", pooled)
        m, r_mid = self._res("mid", d, temb)
        u, c_up = self._conv("up", m)
        s = np.repeat(np.repeat(u, 2, axis=1), 2, axis=2) + e
        dd, r_dec = self._res("dec", s, temb)
        a, sa = _silu(dd)
        eps, c_out = self._conv("out", a)
        eps = depth_to_space(eps, self.arch.patch)

        cache = None
        if keep_cache:
            cache = dict(t=t, emb=emb, tpre=tpre, temb=temb, ts=ts, c_in=c_in, r_enc=r_enc,
                         c_down=c_down, r_mid=r_mid, c_up=c_up, r_dec=r_dec, dd=dd, sa=sa,
                         c_out=c_out, squeeze=squeeze, eshape=e.shape)
        if squeeze:
            eps = eps[0]
        return eps, cache

    def _to_score(self, eps, t):
        std = np.broadcast_to(np.asarray(self.sde.marginal_prob(t).std), t.shape)
        if eps.ndim == 3:
            return -eps / eps.dtype.type(std[0])
        return -eps / _bcast(std, eps).astype(self.dtype)

    def forward(self, x, y, t):
        """Score estimate and a cache for :meth:`backward`."""
        eps, cache = self.predict_eps(x, y, t, keep_cache=True)
        return self._to_score(eps, cache["t"]), cache

    def __call__(self, x, y, t):
        eps, _ = self.predict_eps(x, y, t)
        b = 1 if eps.ndim == 3 else eps.shape[0]
        return self._to_score(eps, np.broadcast_to(np.asarray(t, dtype=np.float64), (b,)))

    def backward(self, cache, dscore):
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dscore."""
        dscore = np.asarray(dscore)
        if cache["squeeze"]:
            dscore = dscore[None]
        std = np.asarray(self.sde.marginal_prob(cache["t"]).std)
        deps = (-dscore / _bcast(std, dscore)).astype(self.dtype)
        return self.backward_eps(cache, deps)

    def backward_eps(self, cache, deps):
        g = {}
        temb = cache["temb"]
        da = self._conv_bwd("out", cache["c_out"], space_to_depth(deps, self.arch.patch), g)
        ddd = _silu_bwd(cache["dd"], cache["sa"], da)
        ds, dtemb = self._res_bwd("dec", cache["r_dec"], ddd, temb, g)
        bb, hh, ww, cc = ds.shape
        du = ds.reshape(bb, hh // 2, 2, ww // 2, 2, cc).sum(axis=(2, 4))
        de_skip = ds
        dm = self._conv_bwd("up", cache["c_up"], du, g)
        dd_, dt2 = self._res_bwd("mid", cache["r_mid"], dm, temb, g)
        dtemb = dtemb + dt2
        dpooled = self._conv_bwd("down", cache["c_down"], dd_, g)
        de = de_skip + 0.25 * np.repeat(np.repeat(dpooled, 2, axis=1), 2, axis=2)
        dh0, dt3 = self._res_bwd("enc", cache["r_enc"], de, temb, g)
        dtemb = dtemb + dt3
        self._conv_bwd("in", cache["c_in"], dh0, g)
        dtpre = _silu_bwd(cache["tpre"], cache["ts"], dtemb)
        g["temb.w"] = cache["emb"].T @ dtpre
        g["temb.b"] = dtpre.sum(axis=0)
        return g
