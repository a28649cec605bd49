"""Central finite-difference verification of analytic gradients.

Everything here runs in the double-precision path: f32 finite differences
are numerically unreliable.  The relative error of a coordinate is
|analytic - fd| / max(|analytic| + |fd|, 1e-4); a check passes when at
least 95% of sampled coordinates stay under 1e-4 and the worst stays
under 1e-3.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, no_grad, record
from . import ops
from .blocks import (dib, efficient_mamba_block, init_block, init_dib,
                     init_sgfn, init_vss, sgfn, vss_block)
from .network import MambaUIE, ModelConfig, named_tensors
from .scan import init_scan_params, selective_scan_1d
from .training import l1_loss

__all__ = ["CheckResult", "fd_check", "run_suite", "TINY_CONFIG"]

REL_TOL = 1e-4
MAX_TOL = 1e-3
MIN_FRACTION = 0.95
_DENOM_FLOOR = 1e-4

TINY_CONFIG = ModelConfig(base_channels=4, patch_size=1, n_state=2)


@dataclass
class CheckResult:
    name: str
    frac_ok: float
    max_err: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.frac_ok >= MIN_FRACTION and self.max_err < MAX_TOL


def fd_check(name, build_loss, wrt, samples_per_tensor=8, eps=1e-5,
             seed=0) -> CheckResult:
    """Compare analytic gradients of ``build_loss()`` against central
    finite differences at sampled coordinates of the ``wrt`` tensors.

    ``wrt`` is an iterable of (label, Tensor); every tensor must be a
    float64 leaf with requires_grad set.
    """
    wrt = list(wrt)
    for label, t in wrt:
        if t.dtype != np.float64:
            raise TypeError(f"{label}: gradient checks require float64 tensors")
        t.zero_grad()
    with record() as tape:
        loss = build_loss()
        backward(tape, loss)
    analytic = {label: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for label, t in wrt}
    for _, t in wrt:
        t.zero_grad()

    rng = np.random.default_rng(seed)
    errs = []
    for label, t in wrt:
        flat = t.data.reshape(-1)
        numel = flat.size
        if numel <= samples_per_tensor:
            coords = np.arange(numel)
        else:
            coords = rng.choice(numel, size=samples_per_tensor, replace=False)
        a_flat = analytic[label].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = build_loss().item()
            flat[i] = orig - eps
            with no_grad():
                f_minus = build_loss().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            errs.append(abs(a - fd) / max(abs(a) + abs(fd), _DENOM_FLOOR))
    errs = np.asarray(errs)
    return CheckResult(name=name, frac_ok=float(np.mean(errs < REL_TOL)),
                       max_err=float(errs.max()), checked=int(errs.size))


def _probe_loss(out: Tensor, probe: Tensor) -> Tensor:
    return ops.sum_all(ops.mul(out, probe))


def _rand(rng, shape, grad=True) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=grad,
                  dtype=np.float64)


def run_suite(seed: int = 0, samples_per_tensor: int = 6,
              network_samples: int = 2):
    """Gradient-check every op and every block, plus a tiny end-to-end
    network under an L1 loss.  Returns a list of CheckResult."""
    rng = np.random.default_rng(seed)
    results = []

    x = _rand(rng, (2, 4, 5, 6))
    w = _rand(rng, (4, 2, 3, 3))
    b = _rand(rng, (4,))
    probe = _rand(rng, (2, 4, 5, 6), grad=False)
    results.append(fd_check(
        "conv2d", lambda: _probe_loss(
            ops.conv2d(x, w, b, stride=1, padding=1, groups=2), probe),
        [("x", x), ("w", w), ("b", b)], samples_per_tensor, seed=seed))

    x = _rand(rng, (2, 3, 4, 4))
    w = _rand(rng, (5, 3))
    b = _rand(rng, (5,))
    probe = _rand(rng, (2, 5, 4, 4), grad=False)
    results.append(fd_check(
        "linear", lambda: _probe_loss(ops.linear(x, w, b), probe),
        [("x", x), ("w", w), ("b", b)], samples_per_tensor, seed=seed))

    x = _rand(rng, (2, 5, 3, 3))
    g = _rand(rng, (5,))
    bt = _rand(rng, (5,))
    probe = _rand(rng, (2, 5, 3, 3), grad=False)
    results.append(fd_check(
        "layer_norm", lambda: _probe_loss(ops.layer_norm(x, g, bt), probe),
        [("x", x), ("gamma", g), ("beta", bt)], samples_per_tensor, seed=seed))

    for kind in ("gelu", "silu", "sigmoid"):
        x = _rand(rng, (2, 3, 4, 4))
        probe = _rand(rng, (2, 3, 4, 4), grad=False)
        results.append(fd_check(
            kind, lambda k=kind, xx=x, pp=probe: _probe_loss(
                ops.activation(xx, k), pp),
            [("x", x)], samples_per_tensor, seed=seed))

    a = _rand(rng, (2, 1, 4, 4))
    b2 = _rand(rng, (2, 3, 4, 4))
    probe = _rand(rng, (2, 3, 4, 4), grad=False)
    results.append(fd_check(
        "mul_broadcast", lambda: _probe_loss(ops.mul(a, b2), probe),
        [("a", a), ("b", b2)], samples_per_tensor, seed=seed))

    x = _rand(rng, (2, 3, 4, 4))
    probe = _rand(rng, (2, 3, 1, 1), grad=False)
    results.append(fd_check(
        "global_avg_pool", lambda: _probe_loss(ops.global_avg_pool(x), probe),
        [("x", x)], samples_per_tensor, seed=seed))

    x = _rand(rng, (1, 2, 4, 4))
    probe = _rand(rng, (1, 8, 2, 2), grad=False)
    results.append(fd_check(
        "pixel_rearrange", lambda: _probe_loss(
            ops.pixel_rearrange(x, 2, "down"), probe),
        [("x", x)], samples_per_tensor, seed=seed))

    params = init_scan_params(3, 2, rng, dtype=np.float64)
    u = _rand(rng, (1, 12, 3))
    probe = _rand(rng, (1, 12, 3), grad=False)
    results.append(fd_check(
        "selective_scan", lambda: _probe_loss(
            selective_scan_1d(u, params), probe),
        [("u", u)] + list(named_tensors(params, "scan")),
        samples_per_tensor, seed=seed))

    vw = init_vss(4, 2, 2, rng, dtype=np.float64)
    x = _rand(rng, (1, 4, 4, 4))
    probe = _rand(rng, (1, 4, 4, 4), grad=False)
    results.append(fd_check(
        "vss_block", lambda: _probe_loss(vss_block(x, vw), probe),
        [("x", x)] + list(named_tensors(vw, "vss")),
        samples_per_tensor, seed=seed))

    dw = init_dib(4, rng, dtype=np.float64)
    xv = _rand(rng, (1, 4, 4, 4))
    xl = _rand(rng, (1, 4, 4, 4))
    probe = _rand(rng, (1, 4, 4, 4), grad=False)
    results.append(fd_check(
        "dib", lambda: _probe_loss(dib(xv, xl, dw), probe),
        [("map_vss", xv), ("map_local", xl)] + list(named_tensors(dw, "dib")),
        samples_per_tensor, seed=seed))

    sw = init_sgfn(4, 2, rng, dtype=np.float64)
    x = _rand(rng, (1, 4, 4, 4))
    probe = _rand(rng, (1, 4, 4, 4), grad=False)
    results.append(fd_check(
        "sgfn", lambda: _probe_loss(sgfn(x, sw), probe),
        [("x", x)] + list(named_tensors(sw, "sgfn")),
        samples_per_tensor, seed=seed))

    bw = init_block(4, 2, 2, 2, rng, dtype=np.float64)
    x = _rand(rng, (1, 4, 8, 8))
    probe = _rand(rng, (1, 4, 8, 8), grad=False)
    results.append(fd_check(
        "efficient_mamba_block", lambda: _probe_loss(
            efficient_mamba_block(x, bw), probe),
        [("x", x)] + list(named_tensors(bw, "block")),
        samples_per_tensor, seed=seed))

    model = MambaUIE(TINY_CONFIG, seed=seed, dtype=np.float64)
    img = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)), requires_grad=True,
                 dtype=np.float64)
    target = Tensor(rng.uniform(0, 1, size=(1, 3, 16, 16)), dtype=np.float64)
    # smaller eps: keeps +/- perturbations on one side of the L1 kink
    results.append(fd_check(
        "network_l1", lambda: l1_loss(model.forward(img), target),
        [("image", img)] + list(model.parameters().items()),
        network_samples, eps=1e-6, seed=seed))

    return results
