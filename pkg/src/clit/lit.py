"""Local Implicit Transformer.

A query at a continuous HR coordinate attends over the G_h x G_w LR
features around its nearest LR pixel. Keys and values are gathered from
the grid, the query feature is bilinearly interpolated, and the logits
receive a per-head bias computed from the sinusoidal encoding of the
query-to-grid offsets. The attended feature and the HR cell size are
decoded by an MLP into a residual RGB value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import coords as _coords
from .config import LitConfig
from .coords import QueryBatch
from .numerics import MLP, Conv2d, Linear, Module, Tensor, as_tensor, ops


def freq_encode(offsets: np.ndarray, bands: int = 10, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding of (..., 2) offsets into (..., 4 * bands).

    Per component: sin(2^0 d), cos(2^0 d), ..., sin(2^(L-1) d), cos(2^(L-1) d);
    the y block comes before the x block.
    """
    offsets = np.asarray(offsets, dtype=dtype)
    if offsets.shape[-1] != 2:
        raise ValueError(f"offsets must end in a (y, x) axis, got {offsets.shape}")
    freqs = (2.0 ** np.arange(bands)).astype(dtype)
    arg = offsets[..., :, None] * freqs  # (..., 2, L)
    enc = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., 2, L, 2)
    return enc.reshape(*offsets.shape[:-1], 4 * bands)


def positional_bias(offsets: np.ndarray, fc: Linear, bands: int = 10) -> Tensor:
    """Per-head logit bias (N, G, heads) from (N, G, 2) offsets."""
    n, g, _ = offsets.shape
    enc = freq_encode(offsets, bands, fc.weight.dtype).reshape(n * g, 4 * bands)
    b = fc(Tensor(enc))
    return ops.reshape(b, (n, g, b.shape[1]))


def cslab_attend(q, k, v, bias=None, heads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Single-query attention: q (1, C), k/v (G, C), bias (heads, G) -> z (1, C).

    Returns the attended feature and the (heads, G) weights.
    """
    q, k, v = (np.asarray(a.data if isinstance(a, Tensor) else a) for a in (q, k, v))
    if k.shape[0] == 0:
        raise ValueError("cslab_attend needs a non-empty grid")
    b = None
    if bias is not None:
        b = Tensor(np.asarray(bias, dtype=q.dtype).T[None])
    z, w = ops.local_attention(Tensor(q.reshape(1, -1)), Tensor(k[None]), Tensor(v[None]), b, heads)
    return z.data, w[0]


@dataclass
class LitOutput:
    rgb: Tensor  # (N, 3) residual
    attention: np.ndarray | None  # (N, heads, G), None for the local ensemble


class LIT(Module):
    def __init__(self, channels: int, config: LitConfig, rng: np.random.Generator,
                 padding: str = "zeros"):
        config.validate(channels)
        self.config = config
        self.channels = channels
        self.q_proj = Conv2d(channels, channels, rng, padding=padding)
        self.k_proj = Conv2d(channels, channels, rng, padding=padding)
        self.v_proj = Conv2d(channels, channels, rng, padding=padding)
        self.bias_fc = Linear(4 * config.freq_bands, config.heads, rng) if config.use_freq_bias else None
        d_in = channels + (2 if config.use_cell else 0)
        hidden = [config.decoder_hidden] * (config.decoder_depth - 1)
        self.decoder = MLP(d_in, 3, hidden, rng)

    @property
    def grid(self) -> tuple[int, int]:
        return self.config.effective_grid

    def project(self, feat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if feat.ndim != 3 or feat.shape[2] != self.channels:
            raise ValueError(
                f"LIT expects an (H, W, {self.channels}) feature map, got shape {feat.shape}"
            )
        return self.q_proj(feat), self.k_proj(feat), self.v_proj(feat)

    def decode(self, z: Tensor, cell: tuple[float, float]) -> Tensor:
        if self.config.use_cell:
            n = z.shape[0]
            c = np.broadcast_to(np.asarray(cell, dtype=z.dtype), (n, 2))
            z = ops.concat([z, Tensor(np.ascontiguousarray(c))], axis=-1)
        return self.decoder(z)

    def attend(self, maps, coords: np.ndarray, center: np.ndarray | None = None):
        """Attended features (N, C) and weights for a chunk of queries."""
        qm, kflat, vflat, (h, w) = maps
        grid = _coords.local_grid(coords, (h, w), self.grid, center)
        q = ops.bilinear_sample(qm, coords)
        k = ops.gather_rows(kflat, grid.index)
        v = ops.gather_rows(vflat, grid.index)
        bias = None
        if self.bias_fc is not None:
            bias = positional_bias(grid.offsets, self.bias_fc, self.config.freq_bands)
        return ops.local_attention(q, k, v, bias, self.config.heads)

    def prepare(self, feat: Tensor):
        qm, km, vm = self.project(feat)
        h, w, c = km.shape
        return qm, ops.reshape(km, (h * w, c)), ops.reshape(vm, (h * w, c)), (h, w)

    def _query(self, maps, coords, cell, center=None) -> LitOutput:
        z, attn = self.attend(maps, coords, center)
        return LitOutput(self.decode(z, cell), attn)

    def _ensemble(self, maps, coords, cell) -> Tensor:
        h, w = maps[3]
        u = np.clip(_coords.to_pixel(coords[:, 0], h), 0.0, h - 1)
        v = np.clip(_coords.to_pixel(coords[:, 1], w), 0.0, w - 1)
        i0, j0 = np.floor(u).astype(np.int64), np.floor(v).astype(np.int64)
        i1, j1 = np.minimum(i0 + 1, h - 1), np.minimum(j0 + 1, w - 1)
        fu, fv = u - i0, v - j0
        # Each anchor is weighted by the area of the rectangle spanned by the
        # query and the diagonally opposite anchor.
        anchors = [
            (i0, j0, (1 - fu) * (1 - fv)),
            (i0, j1, (1 - fu) * fv),
            (i1, j0, fu * (1 - fv)),
            (i1, j1, fu * fv),
        ]
        total = None
        for ai, aj, wt in anchors:
            rgb = self._query(maps, coords, cell, np.stack([ai, aj], axis=-1)).rgb
            term = ops.mul(rgb, wt[:, None].astype(rgb.dtype))
            total = term if total is None else total + term
        return total

    def ensemble_weights(self, coords: np.ndarray, lr_shape: tuple[int, int]) -> np.ndarray:
        _, wts = _coords.bilinear_weights(coords, *lr_shape)
        return wts

    def forward(self, feat: Tensor, queries: QueryBatch, maps=None, keep_attention: bool = True) -> LitOutput:
        """Residual RGB for every query, evaluated in chunks of ``query_chunk``.

        Attention weights cost N x heads x G floats; pass ``keep_attention=False``
        to drop them chunk by chunk on large outputs.
        """
        maps = maps if maps is not None else self.prepare(feat)
        chunk = self.config.query_chunk
        n = len(queries)
        outs, attns = [], []
        for start in range(0, n, chunk):
            c = queries.coords[start : start + chunk]
            if self.config.local_ensemble:
                outs.append(self._ensemble(maps, c, queries.cell))
            else:
                o = self._query(maps, c, queries.cell)
                outs.append(o.rgb)
                if keep_attention:
                    attns.append(o.attention)
        rgb = outs[0] if len(outs) == 1 else ops.concat(outs, axis=0)
        attn = None if not attns else (
            attns[0] if len(attns) == 1 else np.concatenate(attns, axis=0)
        )
        return LitOutput(rgb, attn)

    def __call__(self, feat, queries: QueryBatch) -> Tensor:
        return self.forward(as_tensor(feat), queries).rgb

    def zero_output(self) -> None:
        last = self.decoder.layers[-1]
        last.weight.data = np.zeros_like(last.weight.data)
        last.bias.data = np.zeros_like(last.bias.data)

    def decoder_parameter_count(self) -> int:
        return sum(p.data.size for p in self.decoder.parameters())
