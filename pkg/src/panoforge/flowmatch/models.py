"""Velocity models small enough to check by hand.

Token-wise models see the other streams only through *position pooling*:
every hidden vector is augmented with the mean over all tokens sharing its
2D position id. This is the cheapest mixing that lets aligned condition
tokens influence target tokens, and it reduces to a no-op in the
shared-branch layout where each position holds a single token.
"""
from __future__ import annotations

import numpy as np

from .core import TokenBatch
from .lora import LoRALayer


class VelocityModel:
    """Interface: ``predict(batch, t) -> (N, batch.out_width)`` array."""

    def predict(self, batch: TokenBatch, t: float):
        raise NotImplementedError


class TrainableModel(VelocityModel):
    """A velocity model with a flat parameter dict and analytic gradients."""

    params: dict
    trainable: set

    def forward(self, batch: TokenBatch, t: float):
        raise NotImplementedError

    def backward(self, cache, dout) -> dict:
        raise NotImplementedError

    def predict(self, batch, t):
        return self.forward(batch, t)[0]

    def n_params(self, names=None) -> int:
        names = self.params if names is None else names
        return sum(self.params[k].size for k in names)


# -- analytic oracles --------------------------------------------------------

class ConstantVelocity(VelocityModel):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, batch, t):
        return np.broadcast_to(self.value, (batch.tokens.shape[0], batch.out_width)).copy()


class TimeLinearVelocity(VelocityModel):
    """``f = slope * t`` everywhere (exact integral ``slope / 2``)."""

    def __init__(self, slope=2.0):
        self.slope = float(slope)

    def predict(self, batch, t):
        return np.full((batch.tokens.shape[0], batch.out_width), self.slope * t)


class LinearDecay(VelocityModel):
    """``f(z) = -rate * z`` on target tokens; exact flow is ``z0 * exp(-rate)``."""

    def __init__(self, rate=1.0):
        self.rate = float(rate)

    def predict(self, batch, t):
        grids = batch.stream_grids()[batch.n_conditions:]
        return batch.pack_targets([-self.rate * g for g in grids])


class ShiftConvVelocity(VelocityModel):
    """Circular horizontal stencil on targets plus a pointwise condition term.

    Commutes with circular column shifts, so seam rolling must not change
    an integration that uses it.
    """

    def __init__(self, weights=(0.3, -0.5, 0.2), cond_weight=0.25):
        self.weights = tuple(float(w) for w in weights)
        self.cond_weight = float(cond_weight)

    def predict(self, batch, t):
        grids = batch.stream_grids()
        conds, targets = grids[: batch.n_conditions], grids[batch.n_conditions:]
        bias = sum(conds) * self.cond_weight if conds else 0.0
        wl, wc, wr = self.weights
        out = []
        for z in targets:
            v = wl * np.roll(z, 1, axis=1) + wc * z + wr * np.roll(z, -1, axis=1) + bias
            out.append(v * (1.0 + t))
        return batch.pack_targets(out)


# -- trainable models --------------------------------------------------------

def _pool(h, keys, n_keys):
    sums = np.zeros((n_keys, h.shape[1]))
    np.add.at(sums, keys, h)
    counts = np.bincount(keys, minlength=n_keys).astype(np.float64)
    return sums / np.maximum(counts, 1.0)[:, None], counts


def _route_index(routes, n_routes):
    return [np.nonzero(routes == r)[0] for r in range(n_routes)]


class LinearVelocity(TrainableModel):
    """``y = W (x + pool(x)) + b + t * w_t``."""

    def __init__(self, d_in, d_out, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        self.params = {
            "W": rng.standard_normal((d_out, d_in)) * scale,
            "b": np.zeros(d_out),
            "wt": np.zeros(d_out),
        }
        self.trainable = set(self.params)

    def forward(self, batch, t):
        x = batch.tokens
        keys = batch.position_keys()
        pooled, counts = _pool(x, keys, batch.grid[0] * batch.grid[1])
        g = x + pooled[keys]
        p = self.params
        y = g @ p["W"].T + p["b"] + t * p["wt"]
        return y, (g, t)

    def backward(self, cache, dout):
        g, t = cache
        return {"W": dout.T @ g, "b": dout.sum(0), "wt": t * dout.sum(0)}


class TinyMLP(TrainableModel):
    """Two tanh-MLP layers, each a shared base weight plus per-route LoRA.

    ``h = tanh(W1 x + LoRA1_r(x) + b1 + t * wt)``, ``g = h + pool(h)``,
    ``y = W2 g + LoRA2_r(g) + b2``. With all ``B`` matrices zero the model is
    bit-identical to its base.
    """

    def __init__(self, d_in, d_out, hidden=16, n_routes=1, rank=2, alpha=None, seed=0,
                 base_scale=1.0, use_lora=True, trainable="lora"):
        rng = np.random.default_rng(seed)
        self.rank = int(rank)
        self.alpha = float(rank if alpha is None else alpha)
        self.n_routes = int(n_routes)
        self.use_lora = bool(use_lora)
        p = {
            "W1": rng.standard_normal((hidden, d_in)) * base_scale / np.sqrt(d_in),
            "b1": np.zeros(hidden),
            "wt": rng.standard_normal(hidden) * 0.1,
            "W2": rng.standard_normal((d_out, hidden)) * base_scale / np.sqrt(hidden),
            "b2": np.zeros(d_out),
        }
        if self.use_lora:
            for r in range(self.n_routes):
                p[f"A1.{r}"] = rng.standard_normal((self.rank, d_in)) / np.sqrt(d_in)
                p[f"B1.{r}"] = np.zeros((hidden, self.rank))
                p[f"A2.{r}"] = rng.standard_normal((self.rank, hidden)) / np.sqrt(hidden)
                p[f"B2.{r}"] = np.zeros((d_out, self.rank))
        self.params = p
        if trainable == "all":
            self.trainable = set(p)
        elif trainable == "lora":
            self.trainable = {k for k in p if k[0] in "AB"} | {"b1", "b2", "wt"}
        else:
            self.trainable = set(trainable)

    @property
    def scale(self):
        return self.alpha / self.rank

    def lora_layer(self, which, route) -> LoRALayer:
        p = self.params
        return LoRALayer(p[f"W{which}"], p[f"A{which}.{route}"], p[f"B{which}.{route}"], self.alpha)

    def forward(self, batch, t):
        p = self.params
        s = self.scale
        x = batch.tokens
        keys = batch.position_keys()
        n_keys = batch.grid[0] * batch.grid[1]
        idx = _route_index(batch.routes, self.n_routes) if self.use_lora else []
        a = x @ p["W1"].T + p["b1"] + t * p["wt"]
        ax1 = {}
        for r, rows in enumerate(idx):
            if rows.size:
                ax1[r] = x[rows] @ p[f"A1.{r}"].T
                a[rows] += s * (ax1[r] @ p[f"B1.{r}"].T)
        h = np.tanh(a)
        pooled, counts = _pool(h, keys, n_keys)
        g = h + pooled[keys]
        y = g @ p["W2"].T + p["b2"]
        ag2 = {}
        for r, rows in enumerate(idx):
            if rows.size:
                ag2[r] = g[rows] @ p[f"A2.{r}"].T
                y[rows] += s * (ag2[r] @ p[f"B2.{r}"].T)
        return y, (x, t, keys, n_keys, counts, idx, ax1, h, g, ag2)

    def backward(self, cache, dy):
        x, t, keys, n_keys, counts, idx, ax1, h, g, ag2 = cache
        p = self.params
        s = self.scale
        grads = {"W2": dy.T @ g, "b2": dy.sum(0)}
        dg = dy @ p["W2"]
        for r, rows in enumerate(idx):
            if rows.size:
                dyr = dy[rows]
                grads[f"B2.{r}"] = s * dyr.T @ ag2[r]
                db = dyr @ p[f"B2.{r}"]  # (n, rank)
                grads[f"A2.{r}"] = s * db.T @ g[rows]
                dg[rows] += s * db @ p[f"A2.{r}"]
        pooled_dg, _ = _pool(dg, keys, n_keys)
        dh = dg + pooled_dg[keys]
        da = dh * (1.0 - h * h)
        grads["W1"] = da.T @ x
        grads["b1"] = da.sum(0)
        grads["wt"] = t * da.sum(0)
        for r, rows in enumerate(idx):
            if rows.size:
                dar = da[rows]
                grads[f"B1.{r}"] = s * dar.T @ ax1[r]
                grads[f"A1.{r}"] = s * (dar @ p[f"B1.{r}"]).T @ x[rows]
        for k in p:
            if k not in grads:
                grads[k] = np.zeros_like(p[k])
        return grads
