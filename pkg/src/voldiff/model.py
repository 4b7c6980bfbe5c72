"""Conditional noise-prediction U-Net for 9x9 surfaces.

Layout (C = enc_channels, B = bottle_channels)::

    input 4x9x9 ── enc1 (C) ── enc2 (C) ─────────────────────┐ skip
                                  └─ down, stride 2 (B, 5x5)  │
                                     └─ mid (B)               │
                                        └─ nearest 9x9, up (C)┤
                                                   concat 2C ─┴─ dec (C) ── 1x1 conv ── 1x9x9

Every block is conv3x3 -> FiLM -> SiLU.  FiLM parameters for each block come
from that block's own small MLP applied to the joint embedding
[sinusoidal(t), scalar_mlp(c)].
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from scipy.special import expit

from . import gridmath as gm
from .errors import DomainError, ShapeError

BLOCKS = ("enc1", "enc2", "down", "mid", "up", "dec")


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 4
    out_channels: int = 1
    enc_channels: int = 16
    bottle_channels: int = 30
    time_embed_dim: int = 10
    scalar_embed_dim: int = 10
    scalar_dim: int = 5
    film_hidden: tuple[int, int] = (10, 10)
    grid_size: int = 9

    def __post_init__(self):
        object.__setattr__(self, "film_hidden", tuple(self.film_hidden))
        for name, v in asdict(self).items():
            vals = v if isinstance(v, tuple) else (v,)
            if any(x <= 0 for x in vals):
                raise ValueError(f"UNetConfig.{name} must be positive")
        if self.time_embed_dim % 2:
            raise ValueError("time embedding dimension must be even")
        down = (self.grid_size + 2 - 3) // 2 + 1
        if down < 1 or _nearest_roundtrip(down, self.grid_size) != self.grid_size:
            raise ShapeError("encoder/decoder spatial sizes do not round-trip")

    @property
    def embed_dim(self) -> int:
        return self.time_embed_dim + self.scalar_embed_dim

    @property
    def bottom_size(self) -> int:
        return (self.grid_size + 2 - 3) // 2 + 1

    def block_channels(self) -> dict[str, tuple[int, int]]:
        c, b = self.enc_channels, self.bottle_channels
        return {
            "enc1": (self.in_channels, c),
            "enc2": (c, c),
            "down": (c, b),
            "mid": (b, b),
            "up": (b, c),
            "dec": (2 * c, c),
        }


def _nearest_roundtrip(small: int, big: int) -> int:
    idx = (np.arange(big) * small) // big
    return big if idx.max() == small - 1 else -1


def param_shapes(cfg: UNetConfig = UNetConfig()) -> "OrderedDict[str, tuple[int, ...]]":
    shapes: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    shapes["scalar.w1"] = (cfg.scalar_embed_dim, cfg.scalar_dim)
    shapes["scalar.b1"] = (cfg.scalar_embed_dim,)
    shapes["scalar.w2"] = (cfg.scalar_embed_dim, cfg.scalar_embed_dim)
    shapes["scalar.b2"] = (cfg.scalar_embed_dim,)
    h1, h2 = cfg.film_hidden
    for name, (cin, cout) in cfg.block_channels().items():
        shapes[f"{name}.conv.w"] = (cout, cin, 3, 3)
        shapes[f"{name}.conv.b"] = (cout,)
        shapes[f"{name}.film.w1"] = (h1, cfg.embed_dim)
        shapes[f"{name}.film.b1"] = (h1,)
        shapes[f"{name}.film.w2"] = (h2, h1)
        shapes[f"{name}.film.b2"] = (h2,)
        shapes[f"{name}.film.w3"] = (2 * cout, h2)
        shapes[f"{name}.film.b3"] = (2 * cout,)
    shapes["out.w"] = (cfg.out_channels, cfg.enc_channels, 1, 1)
    shapes["out.b"] = (cfg.out_channels,)
    return shapes


def param_count(cfg: UNetConfig = UNetConfig()) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


class ParamStore:
    """Named network parameters plus their exponential moving average."""

    def __init__(self, params: Mapping[str, np.ndarray], ema: Mapping[str, np.ndarray] | None = None):
        self.params = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in params.items())
        src = self.params if ema is None else ema
        self.ema = OrderedDict((k, np.array(src[k], dtype=np.float64)) for k in self.params)
        if list(self.ema) != list(self.params):
            raise ShapeError("EMA parameter names differ from live parameters")
        for k in self.params:
            if self.ema[k].shape != self.params[k].shape:
                raise ShapeError(f"EMA shape mismatch for {k}")

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()}, {k: v.copy() for k, v in self.ema.items()})

    def tracked(self, use_ema: bool = False) -> "OrderedDict[str, gm.Array]":
        src = self.ema if use_ema else self.params
        return OrderedDict((k, gm.Array(v, requires_grad=True)) for k, v in src.items())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def param_init(cfg: UNetConfig = UNetConfig(), seed: int = 0) -> ParamStore:
    """Fan-in scaled uniform initialization; the EMA copy starts equal."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    params = OrderedDict()
    for name, shape in shapes.items():
        w_name = name.rsplit(".", 1)[0] + "." + name.rsplit(".", 1)[1].replace("b", "w")
        fan_in = int(np.prod(shapes[w_name][1:]))
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return ParamStore(params)


def sinusoidal_embed(t, dim: int = 10, n: int | None = None) -> np.ndarray:
    """[sin(t f_0..f_{h-1}), cos(t f_0..f_{h-1})], f_i = 10^4^(-i/(h-1)).

    Accepts a scalar step (returns shape (dim,)) or an array of steps
    (returns shape (N, dim)).
    """
    if dim % 2:
        raise ValueError("sinusoidal embedding needs an even dimension")
    t_arr = np.asarray(t, dtype=np.float64)
    if n is not None and np.any((t_arr < 0) | (t_arr > n)):
        raise IndexError(f"step outside 0..{n}")
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / max(half - 1, 1))
    ang = t_arr[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def film_modulate(features, gamma, beta) -> gm.Array:
    """gamma * F + beta with per-channel gamma/beta broadcast over H x W."""
    features = gm.as_array(features)
    squeeze = features.ndim == 3
    if squeeze:
        features = gm.reshape(features, (1,) + features.shape)
        gamma = gm.reshape(gm.as_array(gamma), (1, -1))
        beta = gm.reshape(gm.as_array(beta), (1, -1))
    out = gm.film(features, gamma, beta)
    return gm.reshape(out, out.shape[1:]) if squeeze else out


def film_params(embedding, p: Mapping[str, gm.Array], block: str, channels: int) -> tuple[gm.Array, gm.Array]:
    """(gamma, beta) for one block from the joint embedding; gamma is 1 + output."""
    emb = gm.as_array(embedding)
    if emb.shape[-1] != p[f"{block}.film.w1"].shape[1]:
        raise ShapeError(
            f"embedding length {emb.shape[-1]} does not match block {block} "
            f"({p[f'{block}.film.w1'].shape[1]})"
        )
    h = gm.silu(gm.linear(emb, p[f"{block}.film.w1"], p[f"{block}.film.b1"]))
    h = gm.silu(gm.linear(h, p[f"{block}.film.w2"], p[f"{block}.film.b2"]))
    gb = gm.linear(h, p[f"{block}.film.w3"], p[f"{block}.film.b3"])
    gamma = gm.add(gb[:, :channels], 1.0)
    beta = gb[:, channels:]
    return gamma, beta


def _block(x, emb, p, name: str, stride: int = 1) -> gm.Array:
    h = gm.conv2d(x, p[f"{name}.conv.w"], p[f"{name}.conv.b"], padding=1, stride=stride)
    gamma, beta = film_params(emb, p, name, h.shape[1])
    return gm.silu(gm.film(h, gamma, beta))


def unet_forward(channels, t, scalars, params: Mapping, cfg: UNetConfig = UNetConfig()) -> gm.Array:
    """Predicted noise, shape (N,1,9,9), or (1,9,9) for unbatched input.

    ``params`` maps names to ndarrays or :class:`gridmath.Array`; pass tracked
    arrays (``ParamStore.tracked()``) under a tape to get gradients.
    """
    x = gm.as_array(channels)
    single = x.ndim == 3
    if single:
        x = gm.reshape(x, (1,) + x.shape)
    n = x.shape[0]
    s_in = gm.reshape(gm.as_array(scalars), (n, -1))
    if x.shape[1:] != (cfg.in_channels, cfg.grid_size, cfg.grid_size):
        raise ShapeError(f"expected (N,{cfg.in_channels},{cfg.grid_size},{cfg.grid_size}) input, got {x.shape}")
    if not (np.all(np.isfinite(x.data)) and np.all(np.isfinite(s_in.data))):
        raise DomainError("non-finite network input")
    p = {k: gm.as_array(v) for k, v in params.items()}

    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    t_emb = sinusoidal_embed(t_arr, cfg.time_embed_dim)
    s_emb = gm.silu(gm.linear(s_in, p["scalar.w1"], p["scalar.b1"]))
    s_emb = gm.linear(s_emb, p["scalar.w2"], p["scalar.b2"])
    emb = gm.concat([gm.Array(t_emb), s_emb], axis=1)

    h1 = _block(x, emb, p, "enc1")
    h2 = _block(h1, emb, p, "enc2")
    d = _block(h2, emb, p, "down", stride=2)
    b = _block(d, emb, p, "mid")
    u = gm.upsample_nearest(b, (cfg.grid_size, cfg.grid_size))
    u = _block(u, emb, p, "up")
    o = _block(gm.concat([u, h2], axis=1), emb, p, "dec")
    out = gm.conv2d(o, p["out.w"], p["out.b"])
    return gm.reshape(out, out.shape[1:]) if single else out


# ---------------------------------------------------------------------------
# Inference-only forward pass.
#
# Sampling calls the network hundreds of times per chain, so it gets a
# tape-free path that keeps activations channel-major, (C, N, H, W), and
# computes stride-1 3x3 convolutions as one GEMM over the padded map followed
# by nine shifted sums.  It evaluates exactly the same function as
# :func:`unet_forward` (agreement is checked in the test suite).
# ---------------------------------------------------------------------------


def _silu_np(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    s *= x
    return s


def _mlp_np(x: np.ndarray, p: Mapping[str, np.ndarray], prefix: str, layers: int) -> np.ndarray:
    for i in range(1, layers + 1):
        x = x @ p[f"{prefix}.w{i}"].T + p[f"{prefix}.b{i}"]
        if i < layers:
            x = _silu_np(x)
    return x


def _conv3x3_cm(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """3x3 convolution, padding 1, on a channel-major (C,N,H,W) map."""
    c, n, h, wd = x.shape
    o = w.shape[0]
    xp = np.zeros((c, n, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    if stride == 1:
        wk = w.transpose(2, 3, 0, 1).reshape(9 * o, c)
        y = (wk @ xp.reshape(c, -1)).reshape(3, 3, o, n, h + 2, wd + 2)
        out = y[0, 0, :, :, :h, :wd].copy()
        for a in range(3):
            for bb in range(3):
                if a or bb:
                    out += y[a, bb, :, :, a : a + h, bb : bb + wd]
    else:
        ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
        cols = np.empty((c, 3, 3, n, ho, wo))
        for a in range(3):
            for bb in range(3):
                cols[:, a, bb] = xp[:, :, a : a + stride * ho : stride, bb : bb + stride * wo : stride]
        out = (w.reshape(o, -1) @ cols.reshape(9 * c, -1)).reshape(o, n, ho, wo)
    out += b[:, None, None, None]
    return out


def _block_cm(x, emb, p, name, stride=1):
    h = _conv3x3_cm(x, p[f"{name}.conv.w"], p[f"{name}.conv.b"], stride)
    gb = _mlp_np(emb, p, f"{name}.film", 3)  # (N, 2C)
    c = h.shape[0]
    h *= (1.0 + gb[:, :c]).T[:, :, None, None]
    h += gb[:, c:].T[:, :, None, None]
    return _silu_np(h)


def unet_infer(channels, t, scalars, params: Mapping[str, np.ndarray], cfg: UNetConfig = UNetConfig()) -> np.ndarray:
    """Tape-free equivalent of :func:`unet_forward` for batched (N,4,9,9) input."""
    x = np.asarray(channels, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.grid_size, cfg.grid_size):
        raise ShapeError(f"expected (N,{cfg.in_channels},{cfg.grid_size},{cfg.grid_size}) input, got {x.shape}")
    n = x.shape[0]
    s_in = np.asarray(scalars, dtype=np.float64).reshape(n, -1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s_in))):
        raise DomainError("non-finite network input")
    p = {k: (v.data if isinstance(v, gm.Array) else np.asarray(v)) for k, v in params.items()}

    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    emb = np.concatenate(
        [sinusoidal_embed(t_arr, cfg.time_embed_dim), _mlp_np(s_in, p, "scalar", 2)], axis=1
    )
    g = cfg.grid_size
    xc = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    h1 = _block_cm(xc, emb, p, "enc1")
    h2 = _block_cm(h1, emb, p, "enc2")
    d = _block_cm(h2, emb, p, "down", stride=2)
    b = _block_cm(d, emb, p, "mid")
    rows = (np.arange(g) * b.shape[2]) // g
    cols = (np.arange(g) * b.shape[3]) // g
    u = _block_cm(b[:, :, rows][:, :, :, cols], emb, p, "up")
    o = _block_cm(np.concatenate([u, h2], axis=0), emb, p, "dec")
    w_out = p["out.w"].reshape(p["out.w"].shape[0], -1)
    out = (w_out @ o.reshape(o.shape[0], -1)).reshape(-1, n, g, g) + p["out.b"][:, None, None, None]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
