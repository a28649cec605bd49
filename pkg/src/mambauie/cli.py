"""Command-line entry point: train, enhance, eval, flops, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every command
writes a run manifest (command, config, seed, paths, timestamp) into its
output directory before doing any work.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_dataset, load_image, read_split_list, save_image
from .gradcheck import TINY_CONFIG, run_suite
from .metrics import psnr, ssim
from .network import MambaUIE, ModelConfig, count_flops
from .serialization import load_config, load_weights, save_config, save_weights
from .training import TrainConfig, train_loop

__all__ = ["main", "main_entry", "build_parser"]


def _load_cli_config(path):
    """A flat JSON document carrying ModelConfig and/or TrainConfig fields."""
    doc = json.loads(Path(path).read_text())
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(doc) - model_fields - train_fields)
    if unknown:
        raise ValueError(f"unknown config fields: {unknown}")
    mkw = {k: v for k, v in doc.items() if k in model_fields}
    tkw = {k: v for k, v in doc.items() if k in train_fields}
    if "betas" in tkw:
        tkw["betas"] = tuple(tkw["betas"])
    return ModelConfig(**mkw), TrainConfig(**tkw)


def _write_manifest(out_dir: Path, command: str, **fields) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                **fields}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_model(weights_path: str, config_path: str | None) -> MambaUIE:
    wpath = Path(weights_path)
    if config_path is None:
        sidecar = wpath.with_suffix(wpath.suffix + ".json")
        if not sidecar.exists():
            raise FileNotFoundError(
                f"no config given and sidecar {sidecar} not found")
        config_path = sidecar
    cfg = load_config(config_path)
    model = MambaUIE(cfg)
    model.load_state(load_weights(wpath))
    return model


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    if args.config:
        mcfg, tcfg = _load_cli_config(args.config)
    else:
        mcfg, tcfg = ModelConfig(), TrainConfig()
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    if args.epochs is not None:
        # shrinking the run may require shrinking the warmup with it
        warmup = min(tcfg.warmup_epochs, args.epochs - 1)
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs,
                                   warmup_epochs=warmup)
    out = Path(args.out)
    _write_manifest(out, "train", config=args.config, data=args.data,
                    seed=tcfg.seed, out=str(out),
                    model=dataclasses.asdict(mcfg),
                    train=dataclasses.asdict(tcfg))
    stems = read_split_list(args.split_list) if args.split_list else None
    dataset = load_dataset(args.data, stems=stems, split="train")
    model = MambaUIE(mcfg, seed=tcfg.seed)
    train_loop(model, dataset, tcfg, out_dir=out, log_path=out / "train.log",
               max_steps=args.max_steps)
    weights_path = out / "final.muie"
    save_weights(model.parameters(), weights_path)
    save_config(mcfg, out / "final.muie.json")
    print(f"wrote {weights_path}")
    return 0


def cmd_enhance(args) -> int:
    model = _load_model(args.weights, args.config)
    src = Path(args.input)
    dst = Path(args.out)
    if src.is_dir():
        inputs = sorted(src.glob("*.png"))
        if not inputs:
            raise FileNotFoundError(f"no PNG files under {src}")
        dst.mkdir(parents=True, exist_ok=True)
        outputs = [dst / p.name for p in inputs]
        manifest_dir = dst
    else:
        inputs, outputs = [src], [dst]
        dst.parent.mkdir(parents=True, exist_ok=True)
        manifest_dir = dst.parent
    _write_manifest(manifest_dir, "enhance", weights=args.weights,
                    config=args.config, input=str(src), out=str(dst),
                    workers=args.workers)
    for inp, outp in zip(inputs, outputs):
        img = load_image(inp)
        enhanced = model.predict(img, workers=args.workers)
        save_image(enhanced, outp)
        print(f"{inp} -> {outp}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.weights, args.config)
    out = Path(args.out)
    _write_manifest(out, "eval", weights=args.weights, config=args.config,
                    data=args.data, out=str(out))
    stems = read_split_list(args.split_list) if args.split_list else None
    dataset = load_dataset(args.data, stems=stems, split="test")
    rows = []
    for pair in dataset.pairs:
        pred = model.predict(pair.raw, workers=args.workers)
        rows.append((pair.id, psnr(pred, pair.reference),
                     ssim(pred, pair.reference)))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    print(f"{'id':<20} {'psnr':>10} {'ssim':>8}")
    for rid, p, s in rows:
        print(f"{rid:<20} {p:>10.4f} {s:>8.4f}")
    print(f"{'mean':<20} {mean_psnr:>10.4f} {mean_ssim:>8.4f}")
    with open(out / "results.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "psnr", "ssim"])
        for rid, p, s in rows:
            writer.writerow([rid, repr(p), repr(s)])
        writer.writerow(["mean", repr(mean_psnr), repr(mean_ssim)])
    return 0


_HW_RE = re.compile(r"^(\d+)x(\d+)$")


def cmd_flops(args) -> int:
    m = _HW_RE.match(args.hw)
    if not m:
        raise ValueError(f"--hw must look like 1280x720, got {args.hw!r}")
    w, h = int(m.group(1)), int(m.group(2))
    cfg = load_config(args.config) if args.config else ModelConfig()
    if args.out:
        _write_manifest(Path(args.out), "flops", config=args.config, hw=args.hw)
    report = count_flops(cfg, (3, h, w))
    print(f"{'part':<8} {'MACs':>16} {'GFLOPs':>16}")
    for part, macs in report.parts.items():
        print(f"{part:<8} {macs:>16d} {2.0 * macs / 1e9:>16.9f}")
    print(f"{'total':<8} {report.total_macs:>16d} "
          f"{report.total_gflops:>16.9f}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.out:
        _write_manifest(Path(args.out), "gradcheck", config=args.config,
                        seed=args.seed)
    _ = load_config(args.config) if args.config else TINY_CONFIG
    results = run_suite(seed=args.seed)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<24} {status}  frac_ok={r.frac_ok:.3f} "
              f"max_err={r.max_err:.2e} checked={r.checked}")
        ok = ok and r.passed
    return 0 if ok else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mambauie",
        description="Underwater image enhancement with selective-scan blocks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a paired raw/reference dataset")
    p.add_argument("--data", required=True, help="dataset root (raw/, reference/)")
    p.add_argument("--config", help="flat JSON with model + training fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--epochs", type=int, help="override the epoch count")
    p.add_argument("--split-list", help="text file of stems to train on")
    p.add_argument("--max-steps", type=int, help="stop after this many steps")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance one PNG or a directory of PNGs")
    p.add_argument("--weights", required=True)
    p.add_argument("--config", help="model config JSON (default: sidecar)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM table over a paired dataset")
    p.add_argument("--weights", required=True)
    p.add_argument("--config", help="model config JSON (default: sidecar)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="eval_out", help="directory for results.csv")
    p.add_argument("--split-list", help="text file of stems to evaluate")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("flops", help="analytic per-stage GFLOPs report")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--hw", default="1280x720", help="input resolution, WxH")
    p.add_argument("--out", help="optional manifest directory")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config", help="model config JSON (informational)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional manifest directory")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())
