"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from voldiff import dataprep as dp
from voldiff import gridmath as gm

FD_STEP = 1e-4
# gradients smaller than this are compared in absolute terms
GRAD_FLOOR = 1e-6


def relative_error(a, b, floor: float = GRAD_FLOOR) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_difference(f, x: np.ndarray, h: float = FD_STEP, coords=None) -> np.ndarray:
    """d f / d x by central differences; ``coords`` limits the flat indices probed."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros(flat.size)
    coords = range(flat.size) if coords is None else coords
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def tape_gradient(f, *inputs):
    """Gradients of scalar ``f(*arrays)`` with respect to every input."""
    arrays = [gm.Array(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with gm.Tape() as tape:
        loss = f(*arrays)
    grads = gm.backward(tape, loss)
    return [grads[a] for a in arrays]


def conv2d_loops(x, k, bias=None, padding=0, stride=1) -> np.ndarray:
    """Six nested loops over (n, o, i, j, c, a, b): the textbook cross-correlation."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b_ in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0 if bias is None else float(bias[oc])
                    for ic in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                s += xp[b_, ic, i * stride + a, j * stride + b] * k[oc, ic, a, b]
                    out[b_, oc, i, j] = s
    return out


def synthetic_store(n_days: int = 120, seed: int = 3, **split) -> dp.PreparedData:
    days = dp.synthetic_generate(n_days, seed)
    return dp.PreparedData.build(
        [d.date for d in days],
        np.stack([d.surface for d in days]),
        np.array([d.underlying_return for d in days]),
        np.array([d.vix_return for d in days]),
        split_spec=dp.SplitSpec(**split) if split else dp.SplitSpec(),
    )


def hinge_arguments(iv, grid=None, ctx=None) -> np.ndarray:
    """All arguments fed to the penalty hinges, flattened (calendar, spread, butterfly)."""
    from voldiff import arbitrage as arb
    from voldiff.grid import DEFAULT_GRID

    grid = grid or DEFAULT_GRID
    c = arb.relative_call_surface(iv, grid, ctx or arb.PricingContext())
    cal = (c[:, :-1] - c[:, 1:]) / np.diff(grid.tau)[None, :]
    slope = (c[1:] - c[:-1]) / np.diff(grid.m)[:, None]
    fly = slope[:-1] - slope[1:]
    return np.concatenate([cal.ravel(), slope.ravel(), fly.ravel()])


def smooth_coordinates(f_args, x: np.ndarray, h: float = FD_STEP) -> list[int]:
    """Flat indices whose +-h probe leaves every hinge on the same side of zero."""
    x = np.array(x, dtype=np.float64)
    base = f_args(x) > 0
    keep = []
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f_args(x) > 0
        flat[i] = old - h
        down = f_args(x) > 0
        flat[i] = old
        if np.array_equal(up, base) and np.array_equal(down, base):
            keep.append(i)
    return keep


def violating_surface(rng, noise: float = 0.08) -> np.ndarray:
    """A realistic skewed surface with multiplicative noise large enough to break no-arbitrage."""
    from voldiff.dataprep import parametric_surface

    base = parametric_surface(0.2, 0.1, -0.6, 0.8)
    return base * np.exp(noise * rng.standard_normal((9, 9)))


def _silu(v):
    return v / (1.0 + np.exp(-v))


def unet_reference(channels, t, scalars, params, cfg) -> np.ndarray:
    """Single-sample U-Net evaluated with explicit loops: the architecture oracle.

    Returns the (1, 9, 9) noise prediction for a (4, 9, 9) input.
    """
    from voldiff.model import sinusoidal_embed

    p = {k: np.asarray(getattr(v, "data", v), dtype=np.float64) for k, v in params.items()}

    def mlp(x, prefix, n_layers):
        for layer in range(1, n_layers + 1):
            w, b = p[f"{prefix}.w{layer}"], p[f"{prefix}.b{layer}"]
            y = np.array([sum(w[o, i] * x[i] for i in range(len(x))) + b[o] for o in range(len(b))])
            x = _silu(y) if layer < n_layers else y
        return x

    s = mlp(np.asarray(scalars, dtype=np.float64), "scalar", 2)
    emb = np.concatenate([sinusoidal_embed(float(t), cfg.time_embed_dim), s])

    def block(x, name, stride=1):
        h = conv2d_loops(x[None], p[f"{name}.conv.w"], p[f"{name}.conv.b"], padding=1, stride=stride)[0]
        gb = mlp(emb, f"{name}.film", 3)
        c = h.shape[0]
        out = np.empty_like(h)
        for ch in range(c):
            out[ch] = _silu((1.0 + gb[ch]) * h[ch] + gb[c + ch])
        return out

    g = cfg.grid_size
    h1 = block(np.asarray(channels, dtype=np.float64), "enc1")
    h2 = block(h1, "enc2")
    d = block(h2, "down", stride=2)
    b = block(d, "mid")
    small = b.shape[-1]
    u = np.empty((b.shape[0], g, g))
    for i in range(g):
        for j in range(g):
            u[:, i, j] = b[:, (i * small) // g, (j * small) // g]
    u = block(u, "up")
    o = block(np.concatenate([u, h2], axis=0), "dec")
    return conv2d_loops(o[None], p["out.w"], p["out.b"])[0]
