"""The full segmentation model: encoder, text fusion, decoder, head."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, add
from .config import ModelConfig
from .decoder import ConvFuse, PatchExpand, SegmentationHead
from .encoder import Encoder, map_to_tokens, tokens_to_map
from .errors import ShapeError
from .module import Module
from .text import CrossAttentionBlock, Guidance


class SwinTextUNet(Module):
    """Text-guided hierarchical transformer U-Net for binary masks.

    ``forward`` returns (logits, probabilities), both (B, 1, H, W). When text
    guidance is enabled an embedding batch of shape (B, 1, D_t) is required.
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float32, seed: int = 0):
        cfg.validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.encoder = Encoder(cfg, rng, dtype)
        self.guidance = Guidance(cfg, rng, dtype)

        chans = [st.channels for st in cfg.stages]
        self.bottleneck = ConvFuse(chans[-1], rng, dtype)
        self.expands: list[PatchExpand] = []
        self.fuses: list[ConvFuse] = []
        self.dec_guidance: list[CrossAttentionBlock] = []
        for s in range(len(chans) - 1, 0, -1):  # stage s+1 -> stage s
            self.expands.append(PatchExpand(chans[s], rng, dtype))
            self.fuses.append(ConvFuse(chans[s - 1], rng, dtype))
            if cfg.use_decoder_guidance and cfg.use_text:
                self.dec_guidance.append(CrossAttentionBlock(chans[s - 1], rng, dtype))

        extra = int(math.log2(cfg.patch_size)) - 1
        ch = chans[0]
        self.final_expands: list[PatchExpand] = []
        for _ in range(extra):
            self.final_expands.append(PatchExpand(ch, rng, dtype))
            ch //= 2
        self.head = SegmentationHead(ch, rng, dtype)
        self.last_trace: dict | None = None

    # -- parameter naming ----------------------------------------------------
    def named_parameters(self, prefix: str = ""):
        base = f"{prefix}." if prefix else ""
        yield from self.encoder.named_parameters(base + "encoder")
        yield from self.guidance.named_parameters(base + "guidance")
        yield from self.bottleneck.named_parameters(base + "bottleneck")
        for i, (ex, fu) in enumerate(zip(self.expands, self.fuses)):
            yield from ex.named_parameters(f"{base}decoder.level{i}.expand")
            yield from fu.named_parameters(f"{base}decoder.level{i}.fuse")
        for i, blk in enumerate(self.dec_guidance):
            yield from blk.named_parameters(f"{base}decoder.level{i}.guidance")
        for i, ex in enumerate(self.final_expands):
            yield from ex.named_parameters(f"{base}decoder.final{i}.expand")
        yield from self.head.named_parameters(base + "head")

    # -- forward ---------------------------------------------------------------
    def forward(self, x: Tensor, text: Tensor | None = None,
                record_trace: bool = False) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) input, got {x.shape}")
        if x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise ShapeError(
                f"input {x.shape[2]}x{x.shape[3]} does not match configured size {cfg.image_size}"
            )

        tokens = self.encoder(x)
        guided = self.guidance.apply(tokens, text)
        grids = [st.grid for st in cfg.stages]
        skips = [tokens_to_map(z, g) for z, g in zip(guided, grids)]

        trace = {"stage_tokens": [tuple(z.shape[1:]) for z in guided],
                 "decoder_grids": [grids[-1]], "decoder_channels": []}

        # bottleneck fusion of the deepest tokens with their own skip map
        z = guided[-1]
        if cfg.use_convfuse:
            zmap = tokens_to_map(z, grids[-1])
            z = map_to_tokens(self.bottleneck(skips[-1], zmap))
        else:
            z = add(z, map_to_tokens(skips[-1]))

        grid = grids[-1]
        for i, (expand, fuse) in enumerate(zip(self.expands, self.fuses)):
            z = expand(z, grid)
            grid *= 2
            trace["decoder_grids"].append(grid)
            trace["decoder_channels"].append(z.shape[-1])
            skip = skips[len(skips) - 2 - i]
            up = tokens_to_map(z, grid)
            if cfg.use_convfuse:
                fused = fuse(skip, up)
            else:
                fused = add(skip, up)
            z = map_to_tokens(fused)
            if self.dec_guidance:
                stage_index = len(skips) - 2 - i
                t = self.guidance.projector.project(text, stage_index)
                z = self.dec_guidance[i](z, t)

        for expand in self.final_expands:
            z = expand(z, grid)
            grid *= 2
            trace["decoder_grids"].append(grid)
            trace["decoder_channels"].append(z.shape[-1])

        y0 = tokens_to_map(z, grid)
        logits, prob = self.head(y0)
        if record_trace:
            trace["output"] = tuple(prob.shape)
            self.last_trace = trace
        return logits, prob

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}
