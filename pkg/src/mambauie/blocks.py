"""Composite network blocks: the gated VSS block, the dynamic interaction
block fusing its global branch with a depthwise-local branch, the gated
spatial feed-forward, and the efficient mamba block chaining them.

All blocks are pure functions of (input, weights) and preserve the
[N, C, H, W] shape of their input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor
from . import ops
from .scan import DirectionalScan, SCAN_ORDERS, init_scan_params, ss2d

__all__ = [
    "Affine",
    "LinearW",
    "ConvW",
    "VSSWeights",
    "DIBWeights",
    "SGFNWeights",
    "BlockWeights",
    "vss_block",
    "dib",
    "di_vss_block",
    "sgfn",
    "efficient_mamba_block",
    "init_affine",
    "init_linear",
    "init_conv",
    "init_vss",
    "init_dib",
    "init_sgfn",
    "init_block",
]


@dataclass
class Affine:
    gamma: Tensor
    beta: Tensor


@dataclass
class LinearW:
    weight: Tensor
    bias: Tensor


@dataclass
class ConvW:
    weight: Tensor
    bias: Tensor


@dataclass
class VSSWeights:
    """Gate branch (proj_b1) and conv+scan branch share inner width E*C."""

    ln_in: Affine
    proj_b1: LinearW     # C -> E*C
    proj_b2: LinearW     # C -> E*C
    dwconv: ConvW        # depthwise 3x3 on E*C
    scan: tuple          # 4x DirectionalScan on E*C
    ln_scan: Affine
    ln_out: Affine
    proj_out: LinearW    # E*C -> C


@dataclass
class DIBWeights:
    pw_spatial: ConvW    # 1x1, C -> 1
    pw_channel: ConvW    # 1x1, C -> C (applied to the pooled vector)
    dw_local: ConvW      # depthwise 3x3, C -> C


@dataclass
class SGFNWeights:
    ln: Affine
    pw_expand: ConvW     # 1x1, C -> 2*r*C
    dw_gate: ConvW       # depthwise 3x3 on r*C
    pw_project: ConvW    # 1x1, r*C -> C
    ratio: int


@dataclass
class BlockWeights:
    vss: VSSWeights
    dib: DIBWeights
    sgfn: SGFNWeights


def vss_block(x: Tensor, w: VSSWeights) -> Tensor:
    """Gated scan block: a linear gate branch multiplied into a
    conv + four-direction scan branch, then projected back and added
    residually to the input."""
    xn = ops.layer_norm(x, w.ln_in.gamma, w.ln_in.beta)
    b1 = ops.linear(xn, w.proj_b1.weight, w.proj_b1.bias)
    b2 = ops.linear(xn, w.proj_b2.weight, w.proj_b2.bias)
    inner = w.dwconv.weight.shape[0]
    b2 = ops.conv2d(b2, w.dwconv.weight, w.dwconv.bias, padding=1, groups=inner)
    b2 = ops.silu(b2)
    b2 = ss2d(b2, w.scan)
    b2 = ops.layer_norm(b2, w.ln_scan.gamma, w.ln_scan.beta)
    gated = ops.layer_norm(ops.mul(b2, b1), w.ln_out.gamma, w.ln_out.beta)
    return ops.add(x, ops.linear(gated, w.proj_out.weight, w.proj_out.bias))


def dib(map_vss: Tensor, map_local: Tensor, w: DIBWeights) -> Tensor:
    """Cross-reweighting of the global and local branches.

    A one-channel spatial map derived from the global branch gates the
    local branch; a 1x1-spatial channel map derived from the pooled local
    branch gates the global branch.  Both maps lie strictly in (0, 1).
    """
    if map_vss.shape != map_local.shape:
        raise ops.ShapeError("dib: branch shapes must match")
    g_map = ops.sigmoid(ops.gelu(
        ops.conv2d(map_vss, w.pw_spatial.weight, w.pw_spatial.bias)))
    pooled = ops.global_avg_pool(map_local)
    l_map = ops.sigmoid(ops.gelu(
        ops.conv2d(pooled, w.pw_channel.weight, w.pw_channel.bias)))
    return ops.add(ops.mul(g_map, map_local), ops.mul(l_map, map_vss))


def di_vss_block(x: Tensor, w: BlockWeights) -> Tensor:
    """VSS branch in parallel with a depthwise-conv local branch, fused by DIB."""
    map_vss = vss_block(x, w.vss)
    c = x.shape[1]
    map_local = ops.conv2d(x, w.dib.dw_local.weight, w.dib.dw_local.bias,
                           padding=1, groups=c)
    return dib(map_vss, map_local, w.dib)


def sgfn(x: Tensor, w: SGFNWeights) -> Tensor:
    """Dual-branch gated feed-forward with a depthwise 3x3 gate branch."""
    xn = ops.layer_norm(x, w.ln.gamma, w.ln.beta)
    h = ops.conv2d(xn, w.pw_expand.weight, w.pw_expand.bias)
    width = h.shape[1]
    if width % 2:
        raise ops.ShapeError("sgfn: expanded width must split evenly")
    half = width // 2
    h1 = ops.slice_channels(h, 0, half)
    h2 = ops.slice_channels(h, half, width)
    gate = ops.gelu(ops.conv2d(h1, w.dw_gate.weight, w.dw_gate.bias,
                               padding=1, groups=half))
    out = ops.conv2d(ops.mul(gate, h2), w.pw_project.weight, w.pw_project.bias)
    return ops.add(x, out)


def efficient_mamba_block(x: Tensor, w: BlockWeights) -> Tensor:
    return sgfn(di_vss_block(x, w), w.sgfn)


# ---------------------------------------------------------------------------
# initialization (uniform fan-in scaling, zero biases)

def init_affine(c: int, dtype=np.float32) -> Affine:
    return Affine(
        gamma=Tensor(np.ones(c), requires_grad=True, dtype=dtype),
        beta=Tensor(np.zeros(c), requires_grad=True, dtype=dtype),
    )


def init_linear(dout: int, din: int, rng, dtype=np.float32) -> LinearW:
    k = 1.0 / np.sqrt(din)
    return LinearW(
        weight=Tensor(rng.uniform(-k, k, size=(dout, din)),
                      requires_grad=True, dtype=dtype),
        bias=Tensor(np.zeros(dout), requires_grad=True, dtype=dtype),
    )


def init_conv(cout: int, cin_g: int, kh: int, kw: int, rng,
              dtype=np.float32) -> ConvW:
    k = 1.0 / np.sqrt(cin_g * kh * kw)
    return ConvW(
        weight=Tensor(rng.uniform(-k, k, size=(cout, cin_g, kh, kw)),
                      requires_grad=True, dtype=dtype),
        bias=Tensor(np.zeros(cout), requires_grad=True, dtype=dtype),
    )


def init_vss(c: int, expand: int, n_state: int, rng, dtype=np.float32) -> VSSWeights:
    inner = expand * c
    scans = tuple(
        DirectionalScan(order, init_scan_params(inner, n_state, rng, dtype))
        for order in SCAN_ORDERS
    )
    return VSSWeights(
        ln_in=init_affine(c, dtype),
        proj_b1=init_linear(inner, c, rng, dtype),
        proj_b2=init_linear(inner, c, rng, dtype),
        dwconv=init_conv(inner, 1, 3, 3, rng, dtype),
        scan=scans,
        ln_scan=init_affine(inner, dtype),
        ln_out=init_affine(inner, dtype),
        proj_out=init_linear(c, inner, rng, dtype),
    )


def init_dib(c: int, rng, dtype=np.float32) -> DIBWeights:
    return DIBWeights(
        pw_spatial=init_conv(1, c, 1, 1, rng, dtype),
        pw_channel=init_conv(c, c, 1, 1, rng, dtype),
        dw_local=init_conv(c, 1, 3, 3, rng, dtype),
    )


def init_sgfn(c: int, ratio: int, rng, dtype=np.float32) -> SGFNWeights:
    rc = ratio * c
    return SGFNWeights(
        ln=init_affine(c, dtype),
        pw_expand=init_conv(2 * rc, c, 1, 1, rng, dtype),
        dw_gate=init_conv(rc, 1, 3, 3, rng, dtype),
        pw_project=init_conv(c, rc, 1, 1, rng, dtype),
        ratio=ratio,
    )


def init_block(c: int, expand: int, ratio: int, n_state: int, rng,
               dtype=np.float32) -> BlockWeights:
    return BlockWeights(
        vss=init_vss(c, expand, n_state, rng, dtype),
        dib=init_dib(c, rng, dtype),
        sgfn=init_sgfn(c, ratio, rng, dtype),
    )
