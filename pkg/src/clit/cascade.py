"""Cascaded LIT: one shared encoder, one LIT per feature scale."""

from __future__ import annotations

import numpy as np

from .config import LitConfig, ModelConfig
from .coords import QueryBatch, hr_lattice
from .encoder import Encoder
from .lit import LIT, LitOutput
from .numerics import Module, Tensor, as_tensor, no_grad, ops


def multiscale_features(feat: Tensor, factors) -> list[Tensor]:
    """Bilinearly upsampled copies of ``feat``, one per branch factor.

    ``factors[i]`` is the cumulative upsampling of branch i; the first must be 1
    and that branch receives ``feat`` itself.
    """
    factors = list(factors)
    if not factors or factors[0] != 1.0:
        raise ValueError(f"the first branch factor must be 1, got {factors}")
    return [feat if f == 1.0 else ops.bilinear_upsample(feat, f) for f in factors]


def discount_weights(n_branches: int, discount: float) -> list[float]:
    return [discount ** (n_branches - 1 - i) for i in range(n_branches)]


def combine(residuals: list, skip, discount: float):
    """Discounted sum of branch residuals plus the bilinear skip.

    Works on Tensors or plain arrays; branch ``i`` (0-based) of ``n`` is
    weighted by ``discount ** (n - 1 - i)``.
    """
    weights = discount_weights(len(residuals), discount)
    total = None
    for w, r in zip(weights, residuals):
        term = r * w
        total = term if total is None else total + term
    return total + skip


class CLIT(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        config.validate()
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.config = config
        self.encoder = Encoder(config.encoder, rng)
        c = config.encoder.channels
        pad = config.encoder.padding
        self.lits = [LIT(c, config.lit, rng, pad) for _ in range(config.cascade.n_branches)]

    @property
    def n_branches(self) -> int:
        return len(self.lits)

    def add_branch(self, rng: np.random.Generator, scale: float = 2.0,
                   lit_config: LitConfig | None = None) -> LIT:
        """Append a freshly initialized LIT; existing parameters are untouched."""
        lit = LIT(self.config.encoder.channels, lit_config or self.config.lit, rng,
                  self.config.encoder.padding)
        self.lits.append(lit)
        casc = self.config.cascade
        casc.branch_scales = (*casc.branch_scales, float(scale))
        casc.n_branches = len(self.lits)
        return lit

    def inference_factors(self) -> list[float]:
        return [float(x) for x in np.cumprod(self.config.cascade.branch_scales)]

    def zero_decoders(self) -> None:
        for lit in self.lits:
            lit.zero_output()

    def branch_outputs(self, image, queries: QueryBatch, factors=None,
                       keep_attention: bool = True) -> list[LitOutput]:
        image = as_tensor(image)
        factors = self.inference_factors() if factors is None else list(factors)
        if len(factors) != self.n_branches:
            raise ValueError(f"{len(factors)} branch factors for {self.n_branches} branches")
        feat = self.encoder(image)
        feats = multiscale_features(feat, factors)
        return [lit.forward(f, queries, keep_attention=keep_attention) for lit, f in zip(self.lits, feats)]

    def predict(self, image, queries: QueryBatch, factors=None) -> Tensor:
        """Final RGB at the query coordinates (residuals + bilinear skip)."""
        image = as_tensor(image)
        outs = self.branch_outputs(image, queries, factors)
        skip = ops.bilinear_sample(image, queries.coords).data
        return combine([o.rgb for o in outs], skip, self.config.cascade.discount)

    def upscale(self, image, r_h: float, r_w: float | None = None,
                out_shape: tuple[int, int] | None = None, return_branches: bool = False):
        """Full HR image for a real scale per axis (>= 1)."""
        image = as_tensor(image)
        r_w = r_h if r_w is None else r_w
        if r_h < 1 or r_w < 1:
            raise ValueError(f"scale factors must be >= 1 (downsampling unsupported), got {(r_h, r_w)}")
        h, w, _ = image.shape
        if out_shape is None:
            out_shape = (ops.upsampled_size(h, r_h), ops.upsampled_size(w, r_w))
        ho, wo = out_shape
        queries = hr_lattice(ho, wo)
        with no_grad():
            outs = self.branch_outputs(image, queries, keep_attention=False)
            residuals = [o.rgb.data.reshape(ho, wo, 3) for o in outs]
            skip = ops.bilinear_resize(image, ho, wo).data
        hr = combine(residuals, skip, self.config.cascade.discount)
        if return_branches:
            return hr, residuals, skip
        return hr

