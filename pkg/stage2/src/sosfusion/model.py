"""Fragment-fusion network: shared transformer encoder per view, a
super-resolution upsampler, a graph-attention fusion unit over the view
graph, and a convolutional decoder with skip connections.

Views are exchangeable: all per-view weights are shared, and the fusion
unit's learnable adjacency and softmax importance masks are the only
cross-view couplings, so permuting views together with the adjacency
and view embeddings leaves the output unchanged.  Padded (missing)
views are excluded exactly: their payload is zeroed and every softmax
marks them out, so the output is independent of whatever they contain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    n_views: int = 8
    image_size: int = 64
    hidden: int = 32
    heads: int = 4
    depth: int = 4
    patch: int = 8
    upsample_factor: int = 1

    def __post_init__(self):
        if self.upsample_factor not in (1, 2):
            raise ModelError("upsample_factor must be 1 or 2")
        if self.image_size % self.patch != 0:
            raise ModelError(
                f"image size {self.image_size} not divisible by patch {self.patch}"
            )
        if self.hidden % self.heads != 0:
            raise ModelError("hidden size must be divisible by the head count")
        if (self.patch & (self.patch - 1)) != 0:
            raise ModelError("patch size must be a power of two")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


def _conv_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(4, cout),
        nn.GELU(),
    )


class GraphAttentionUnit(nn.Module):
    """Cross-view fusion: one message-passing hop over a fully connected
    view graph with a learnable adjacency, then per-view, per-feature
    importance masks normalized by a softmax across views."""

    def __init__(self, channels: int, n_views: int):
        super().__init__()
        self.adjacency = nn.Parameter(torch.zeros(n_views, n_views))
        self.register_buffer("adjacency_initialized", torch.tensor(False))
        self.message = nn.Conv2d(channels, channels, 1)
        self.mask_net = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.Sigmoid(),
        )

    @torch.no_grad()
    def _init_adjacency(self, feats: torch.Tensor, present: torch.Tensor):
        """Cosine similarity of batch-pooled view features seeds the
        adjacency; training refines it from there."""
        pooled = (feats * present[..., None, None, None]).mean(dim=(0, 3, 4))
        norm = pooled.norm(dim=1, keepdim=True).clamp_min(1e-12)
        unit = pooled / norm
        self.adjacency.copy_(unit @ unit.T)
        self.adjacency_initialized.fill_(True)

    def forward(self, feats: torch.Tensor, pad_mask: torch.Tensor):
        """feats: (B, V, C, H, W); pad_mask: (B, V) bool, True = missing.

        Returns (fused (B, C, H, W), masks (B, V, C, H, W)).
        """
        b, v, c, h, w = feats.shape
        present = ~pad_mask
        if not bool(present.any(dim=1).all()):
            raise ModelError("every sample needs at least one present view")
        feats = feats * present[..., None, None, None]

        if self.training and not bool(self.adjacency_initialized):
            self._init_adjacency(feats, present)

        neg = torch.finfo(feats.dtype).min
        logits = self.adjacency.unsqueeze(0).expand(b, v, v)
        logits = logits.masked_fill(~present[:, None, :], neg)
        weights = torch.softmax(logits, dim=-1)
        messages = self.message(feats.reshape(b * v, c, h, w)).reshape(b, v, c, h, w)
        feats = feats + torch.einsum("bvu,buchw->bvchw", weights, messages)
        feats = feats * present[..., None, None, None]

        raw_masks = self.mask_net(feats.reshape(b * v, c, h, w)).reshape(b, v, c, h, w)
        mask_logits = raw_masks.masked_fill(~present[..., None, None, None], neg)
        masks = torch.softmax(mask_logits, dim=1)
        weighted = feats * masks
        fused = weighted.sum(dim=1)
        return fused, masks


class FragmentFusionNet(nn.Module):
    def __init__(self, config: FusionConfig):
        super().__init__()
        self.config = config
        c = config.hidden
        tokens = (config.image_size // config.patch) ** 2

        self.stem = _conv_block(1, c)
        self.patch_embed = nn.Conv2d(c, c, config.patch, stride=config.patch)
        self.pos_embedding = nn.Parameter(torch.zeros(1, tokens, c))
        self.view_embedding = nn.Parameter(torch.zeros(config.n_views, c))
        nn.init.trunc_normal_(self.pos_embedding, std=0.02)
        nn.init.trunc_normal_(self.view_embedding, std=0.02)

        layer = nn.TransformerEncoderLayer(
            d_model=c,
            nhead=config.heads,
            dim_feedforward=4 * c,
            batch_first=True,
            norm_first=True,
            activation="gelu",
            dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=config.depth, enable_nested_tensor=False
        )

        n_up = int(math.log2(config.patch)) + (config.upsample_factor - 1)
        stages = []
        for _ in range(n_up):
            stages += [
                nn.ConvTranspose2d(c, c, 4, stride=2, padding=1),
                nn.GroupNorm(4, c),
                nn.GELU(),
            ]
        self.upsampler = nn.Sequential(*stages)

        self.gau = GraphAttentionUnit(c, config.n_views)
        self.decoder = nn.Sequential(_conv_block(2 * c, c), _conv_block(c, c))
        self.head = nn.Conv2d(c, 1, 1)

    @property
    def output_size(self) -> int:
        return self.config.image_size * self.config.upsample_factor

    def forward(self, fragments: torch.Tensor, pad_mask: torch.Tensor | None = None):
        """fragments: (B, V, H, W); pad_mask: (B, V) bool, True = missing.

        Returns the speed-of-sound estimate (B, H_out, W_out) in
        normalized units.
        """
        if fragments.ndim != 4:
            raise ModelError("fragments must be (batch, views, h, w)")
        b, v, h, w = fragments.shape
        cfg = self.config
        if v != cfg.n_views:
            raise ModelError(f"expected {cfg.n_views} views, got {v}")
        if h != cfg.image_size or w != cfg.image_size:
            raise ModelError(
                f"expected {cfg.image_size}x{cfg.image_size} fragments, got {h}x{w}"
            )
        if pad_mask is None:
            pad_mask = torch.zeros(b, v, dtype=torch.bool, device=fragments.device)
        present = ~pad_mask

        x = fragments.reshape(b * v, 1, h, w)
        stem = self.stem(x)
        tokens = self.patch_embed(stem).flatten(2).transpose(1, 2)
        tokens = tokens + self.pos_embedding
        view_bias = self.view_embedding.repeat(b, 1).unsqueeze(1)
        tokens = tokens + view_bias
        encoded = self.encoder(tokens)

        side = cfg.image_size // cfg.patch
        feats = encoded.transpose(1, 2).reshape(b * v, cfg.hidden, side, side)
        feats = self.upsampler(feats)
        feats = feats.reshape(b, v, cfg.hidden, self.output_size, self.output_size)

        fused, _ = self.gau(feats, pad_mask)

        stem_views = stem.reshape(b, v, cfg.hidden, h, w)
        weights = present.to(stem.dtype)
        weights = weights / weights.sum(dim=1, keepdim=True)
        skip = torch.einsum("bv,bvchw->bchw", weights, stem_views)
        if cfg.upsample_factor == 2:
            skip = F.interpolate(skip, scale_factor=2, mode="nearest")

        out = self.decoder(torch.cat([fused, skip], dim=1))
        return self.head(out).squeeze(1)


def build_model(config: FusionConfig) -> FragmentFusionNet:
    """Construct the fusion network; raises ModelError on incompatible
    dimensions (patch vs image size, heads vs hidden)."""
    return FragmentFusionNet(config)
