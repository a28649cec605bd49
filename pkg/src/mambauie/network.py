"""Full enhancement network: patch embedding, 4-stage encoder, 4-stage
decoder with additive skips, output head with a global residual, plus
analytic FLOP accounting.

Channel/resolution algebra: the embedding produces C channels at H/P x W/P;
each of the three encoder downsamples doubles channels and halves the
extents, so the latent is [N, 8C, H/8P, W/8P].  The decoder mirrors this.
"""
from __future__ import annotations

import dataclasses
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad
from . import ops
from .blocks import BlockWeights, ConvW, init_block, init_conv
from .scan import scan_macs

__all__ = ["ModelConfig", "MambaUIE", "FlopReport", "count_flops", "named_tensors"]


@dataclass
class ModelConfig:
    base_channels: int = 4
    patch_size: int = 2
    stages: int = 4
    expand: int = 2
    sgfn_ratio: int = 2
    n_state: int = 4
    depth: int = 1
    skip_mode: str = "add"

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.patch_size not in (1, 2, 4):
            raise ValueError("patch_size must be one of {1, 2, 4}")
        if self.stages != 4:
            raise ValueError("architecture is fixed at 4 stages")
        if self.skip_mode != "add":
            raise ValueError("only additive skips are supported")
        if self.base_channels % (self.patch_size ** 2):
            raise ValueError("base_channels must be divisible by patch_size^2")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def multiple(self) -> int:
        """Input extents must be divisible by this (8 * patch size)."""
        return 8 * self.patch_size

    def stage_channels(self, stage: int) -> int:
        return self.base_channels * (2 ** stage)


def named_tensors(obj, prefix: str = ""):
    """Yield (dotted-name, Tensor) pairs from nested weight dataclasses."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_tensors(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from named_tensors(item, name)
    # ints / strings inside weight dataclasses are hyperparameters, not weights


@dataclass
class _NetWeights:
    embed: ConvW
    enc: list            # [stage][block] -> BlockWeights
    downs: list          # 3x ConvW (1x1 after space-to-depth)
    dec: list
    ups: list            # 3x ConvW (1x1 before depth-to-space)
    head: ConvW


class MambaUIE:
    """The enhancement model: config + named weights + forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c, p = cfg.base_channels, cfg.patch_size
        if p > 1:
            embed = init_conv(c, 3 * p * p, 1, 1, rng, dtype)
        else:
            embed = init_conv(c, 3, 3, 3, rng, dtype)

        def stage(blocks_c):
            return [init_block(blocks_c, cfg.expand, cfg.sgfn_ratio,
                               cfg.n_state, rng, dtype)
                    for _ in range(cfg.depth)]

        enc = [stage(cfg.stage_channels(s)) for s in range(4)]
        downs = [init_conv(cfg.stage_channels(s + 1), 4 * cfg.stage_channels(s),
                           1, 1, rng, dtype) for s in range(3)]
        # decoder stage s runs at channels 8C / 2^s
        dec = [stage(cfg.stage_channels(3 - s)) for s in range(4)]
        # 1x1 conv c -> 2c, then depth-to-space leaves c/2 at doubled extents
        ups = [init_conv(2 * cfg.stage_channels(3 - s),
                         cfg.stage_channels(3 - s), 1, 1, rng, dtype)
               for s in range(3)]
        head_in = c // (p * p) if p > 1 else c
        head = init_conv(3, head_in, 3, 3, rng, dtype)
        self.weights = _NetWeights(embed, enc, downs, dec, ups, head)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(named_tensors(self.weights))

    def load_state(self, arrays) -> None:
        """Copy named arrays into the model weights; names must correspond
        exactly and shapes must match."""
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise ValueError(
                "weight/config mismatch; missing: "
                f"{missing or 'none'}; unexpected: {unexpected or 'none'}")
        bad = [n for n in params if tuple(arrays[n].shape) != params[n].shape]
        if bad:
            raise ValueError(f"weight shape mismatch for: {bad}")
        for name, tensor in params.items():
            tensor.data[...] = np.asarray(arrays[name], dtype=self.dtype)

    # -- forward ------------------------------------------------------------

    def patch_embed(self, image: Tensor) -> Tensor:
        p = self.cfg.patch_size
        w = self.weights.embed
        if p > 1:
            return ops.conv2d(ops.pixel_rearrange(image, p, "down"),
                              w.weight, w.bias)
        return ops.conv2d(image, w.weight, w.bias, padding=1)

    @staticmethod
    def downsample(x: Tensor, w: ConvW) -> Tensor:
        return ops.conv2d(ops.pixel_rearrange(x, 2, "down"), w.weight, w.bias)

    @staticmethod
    def upsample(x: Tensor, w: ConvW) -> Tensor:
        return ops.pixel_rearrange(ops.conv2d(x, w.weight, w.bias), 2, "up")

    def _check_extents(self, h: int, w: int) -> None:
        m = self.cfg.multiple
        if h % m or w % m:
            raise ops.ShapeError(
                f"input extents must be multiples of {m}, got {h}x{w}")

    def forward_with_latent(self, image: Tensor):
        """Returns (output, encoder latent).  Output = head(decoder) + input."""
        if image.data.ndim != 4 or image.shape[1] != 3:
            raise ops.ShapeError("expected an [N, 3, H, W] image tensor")
        self._check_extents(image.shape[2], image.shape[3])
        from .blocks import efficient_mamba_block

        f = self.patch_embed(image)
        skips = []
        for s in range(4):
            for blk in self.weights.enc[s]:
                f = efficient_mamba_block(f, blk)
            if s < 3:
                skips.append(f)
                f = self.downsample(f, self.weights.downs[s])
        latent = f
        for s in range(4):
            if s > 0:
                f = self.upsample(f, self.weights.ups[s - 1])
                f = ops.add(f, skips[3 - s])
            for blk in self.weights.dec[s]:
                f = efficient_mamba_block(f, blk)
        p = self.cfg.patch_size
        if p > 1:
            f = ops.pixel_rearrange(f, p, "up")
        head = ops.conv2d(f, self.weights.head.weight, self.weights.head.bias,
                          padding=1)
        return ops.add(head, image), latent

    def forward(self, image: Tensor) -> Tensor:
        out, _ = self.forward_with_latent(image)
        return out

    # -- inference helpers ---------------------------------------------------

    def _infer_one(self, img: np.ndarray, clamp: bool) -> np.ndarray:
        m = self.cfg.multiple
        _, h, w = img.shape
        ph = (-h) % m
        pw = (-w) % m
        padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") \
            if (ph or pw) else img
        with no_grad():
            out = self.forward(Tensor(padded[None], dtype=self.dtype)).data[0]
        out = out[:, :h, :w]
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return np.ascontiguousarray(out)

    def predict(self, images: np.ndarray, workers: int = 1,
                clamp: bool = True) -> np.ndarray:
        """Enhance [N, 3, H, W] (or a single [3, H, W]) float image(s).

        Arbitrary extents are reflect-padded up to the required multiple and
        cropped back.  Items are independent, so the result is bitwise
        identical for any worker count.
        """
        single = images.ndim == 3
        batch = images[None] if single else images
        items = [np.asarray(im, dtype=self.dtype) for im in batch]
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outs = list(pool.map(lambda im: self._infer_one(im, clamp), items))
        else:
            outs = [self._infer_one(im, clamp) for im in items]
        result = np.stack(outs)
        return result[0] if single else result


# ---------------------------------------------------------------------------
# FLOP accounting (analytic; conv/linear/scan MACs only)

@dataclass
class FlopReport:
    parts: "OrderedDict[str, int]" = field(default_factory=OrderedDict)

    @property
    def total_macs(self) -> int:
        return sum(self.parts.values())

    @property
    def total_gflops(self) -> float:
        return 2.0 * self.total_macs / 1e9

    def gflops(self, part: str) -> float:
        return 2.0 * self.parts[part] / 1e9


def _conv_macs(cin: int, cout: int, k: int, hout: int, wout: int,
               groups: int = 1) -> int:
    return k * k * cin * cout * hout * wout // groups


def _block_macs(cfg: ModelConfig, c: int, h: int, w: int) -> int:
    ec = cfg.expand * c
    rc = cfg.sgfn_ratio * c
    tokens = h * w
    vss = 2 * tokens * c * ec                      # gate + scan-branch projections
    vss += _conv_macs(ec, ec, 3, h, w, groups=ec)  # depthwise 3x3
    vss += 4 * scan_macs(tokens, ec, cfg.n_state)
    vss += tokens * ec * c                         # output projection
    dib = tokens * c * 1                           # spatial map (C -> 1)
    dib += c * c                                   # channel map on pooled vector
    dib += _conv_macs(c, c, 3, h, w, groups=c)     # local depthwise branch
    gfn = tokens * c * 2 * rc
    gfn += _conv_macs(rc, rc, 3, h, w, groups=rc)
    gfn += tokens * rc * c
    return cfg.depth * (vss + dib + gfn)


def count_flops(cfg: ModelConfig, input_shape) -> FlopReport:
    """Analytic multiply-accumulate counts per network part.

    ``input_shape`` is (3, H, W) or (N, 3, H, W); counts are per image.
    """
    shape = tuple(input_shape)
    if len(shape) == 4:
        shape = shape[1:]
    if len(shape) != 3 or shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) input shape, got {input_shape}")
    _, h, w = shape
    p, c = cfg.patch_size, cfg.base_channels
    report = FlopReport()
    hp, wp = h // p, w // p
    if p > 1:
        report.parts["embed"] = _conv_macs(3 * p * p, c, 1, hp, wp)
    else:
        report.parts["embed"] = _conv_macs(3, c, 3, h, w)
    hs, ws = hp, wp
    for s in range(4):
        cs = cfg.stage_channels(s)
        report.parts[f"enc{s}"] = _block_macs(cfg, cs, hs, ws)
        if s < 3:
            report.parts[f"down{s}"] = _conv_macs(4 * cs, 2 * cs, 1,
                                                  hs // 2, ws // 2)
            hs, ws = hs // 2, ws // 2
    for s in range(4):
        cs = cfg.stage_channels(3 - s)
        if s > 0:
            cin_up = cfg.stage_channels(4 - s)
            report.parts[f"up{s - 1}"] = _conv_macs(cin_up, 2 * cin_up, 1, hs, ws)
            hs, ws = hs * 2, ws * 2
        report.parts[f"dec{s}"] = _block_macs(cfg, cs, hs, ws)
    head_in = c // (p * p) if p > 1 else c
    report.parts["head"] = _conv_macs(head_in, 3, 3, h, w)
    return report
