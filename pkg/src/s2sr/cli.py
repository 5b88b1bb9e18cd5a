"""Command-line interface: ``s2sr <subcommand> [flags]``.

Exit codes: 0 success, 2 usage, 3 data, 4 internal, 5 non-finite training loss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import raster_io
from .errors import DataError, DomainError, NonFiniteLoss, S2SRError
from .infer import TilingSpec, superresolve_all
from .metrics import evaluate
from .network import NetworkConfig, param_count
from .resample import DegradationSpec, simulate_scene
from .train import TrainConfig, concat_patches, sample_patches, split_train_val, train

log = logging.getLogger("s2sr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL, EXIT_NONFINITE = 0, 2, 3, 4, 5
PROVENANCE_NAME = "provenance.json"


def _manifest_path(p) -> Path:
    p = Path(p)
    return p / "manifest.txt" if p.is_dir() else p


def _scene_digest(manifest_path: Path) -> str:
    """SHA-256 over the manifest text and every referenced band file, in manifest order."""
    h = hashlib.sha256()
    h.update(manifest_path.read_bytes())
    for entry in raster_io.read_manifest(manifest_path).entries:
        h.update((manifest_path.parent / entry.path).read_bytes())
    return h.hexdigest()


def _write_text(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    manifest = _manifest_path(args.scene)
    scene = raster_io.read_scene(manifest)
    spec = DegradationSpec(args.scale, args.sigma)
    degraded, targets = simulate_scene(scene, spec)
    out = Path(args.out)
    raster_io.write_scene(degraded, out / "input")
    raster_io.write_bands(targets, out / "targets", degraded.base_gsd)
    provenance = {
        "format": "s2sr-provenance 1",
        "scale": args.scale,
        "sigma": spec.default_sigma,
        "source_sha256": _scene_digest(manifest),
    }
    _write_text(out / PROVENANCE_NAME, json.dumps(provenance, sort_keys=True, indent=2) + "\n")
    log.info("simulated %dx: inputs at %d m, %d target bands", args.scale, degraded.base_gsd, len(targets))
    return EXIT_OK


def cmd_make_patches(args) -> int:
    sets = []
    for i, sim in enumerate(args.sim):
        sim = Path(sim)
        scene = raster_io.read_scene(sim / "input" / "manifest.txt")
        targets = raster_io.read_bands(sim / "targets" / "manifest.txt")
        size = args.patch_size or (96 if scene.has_c and len(targets) == 2 else 32)
        sets.append(sample_patches(scene, targets, args.n, size, args.seed + i))
    patches = concat_patches(sets)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    raster_io.save_patches(patches, args.out)
    log.info("wrote %d patches of %d px to %s", len(patches), patches.patch_size, args.out)
    return EXIT_OK


def _net_config(args) -> NetworkConfig:
    if args.scale == 2:
        return NetworkConfig.t2x(args.d, args.f)
    return NetworkConfig.s6x(args.d, args.f)


def cmd_train(args) -> int:
    patches = raster_io.load_patches(args.patches)
    cfg = _net_config(args)
    if args.upsampling != cfg.upsampling:
        cfg = NetworkConfig(cfg.d, cfg.f, cfg.input_channels, cfg.output_channels, cfg.lam, cfg.scale, args.upsampling)
    trn, val = split_train_val(patches, args.val_fraction, args.seed)
    tc = TrainConfig(
        batch_size=args.batch_size,
        lr0=args.lr,
        max_epochs=args.epochs,
        seed=args.seed,
        max_seconds=args.max_seconds,
    )
    layers, params = param_count(cfg)
    log.info("training %s d=%d f=%d: %d layers, %d parameters", cfg.variant, cfg.d, cfg.f, layers, params)
    weights, history = train(cfg, tc, trn, val)
    Path(args.out_ckpt).parent.mkdir(parents=True, exist_ok=True)
    raster_io.save_weights(cfg, weights, args.out_ckpt)
    _write_text(args.history or f"{args.out_ckpt}.history.txt", history.to_table())
    sys.stdout.write(history.to_table())
    return EXIT_OK


def cmd_superres(args) -> int:
    scene = raster_io.read_scene(_manifest_path(args.scene))
    model_2x = raster_io.load_weights(args.ckpt2x)
    model_6x = raster_io.load_weights(args.ckpt6x) if args.ckpt6x else None
    tiling = TilingSpec(tile=args.tile, overlap_lowres=args.overlap, widen_to_receptive_field=not args.literal_overlap)
    timings = []
    started = time.perf_counter()
    bands = superresolve_all(scene, model_2x, model_6x, tiling, timings=timings)
    total = time.perf_counter() - started
    for (r0, r1, c0, c1), secs in timings:
        log.info("tile rows %d:%d cols %d:%d %.3f s", r0, r1, c0, c1, secs)
    log.info("%d tiles, total %.3f s (%.4f min)", len(timings), total, total / 60)
    raster_io.write_bands(bands, args.out, scene.base_gsd)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = raster_io.read_bands(_manifest_path(args.truth))
    pred_all = {b.band_id: b for b in raster_io.read_bands(_manifest_path(args.pred))}
    # extra predicted bands (e.g. the A set passed through) are ignored
    pred = [pred_all[t.band_id] for t in truth if t.band_id in pred_all]
    report = evaluate(pred, truth)
    table = report.to_table()
    sys.stdout.write(table)
    if args.out_report:
        _write_text(args.out_report, report.to_keyvalue())
        _write_text(f"{args.out_report}.table.txt", table)
    return EXIT_OK


def cmd_info(args) -> int:
    lines = []
    if args.scene:
        manifest = _manifest_path(args.scene)
        scene = raster_io.read_scene(manifest)
        lines.append(f"scene: {manifest}")
        lines.append(f"base_gsd: {scene.base_gsd}")
        lines.append(f"size: {scene.width} x {scene.height}")
        for b in scene.bands():
            lines.append(f"band: {b.band_id} {b.gsd} m {b.width} x {b.height}")
    if args.ckpt:
        cfg, _ = raster_io.load_weights(args.ckpt)
        layers, params = param_count(cfg)
        lines.append(f"checkpoint: {args.ckpt}")
        lines.append(f"variant: {cfg.variant} d={cfg.d} f={cfg.f} lambda={cfg.lam} upsampling={cfg.upsampling}")
        lines.append(f"layers: {layers}")
        lines.append(f"parameters: {params}")
    if args.patches:
        ps = raster_io.load_patches(args.patches)
        lines.append(f"patches: {args.patches}")
        lines.append(f"count: {len(ps)}")
        lines.append(f"patch_size: {ps.patch_size}")
        lines.append(f"target_bands: {ps.targets.shape[-1]}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s2sr", description="Sentinel-2 band super-resolution toolkit.")
    parser.add_argument(
        "--threads",
        type=_positive_int,
        default=None,
        help="BLAS threads (default: $S2SR_THREADS, else all cores); 1 gives bit-reproducible runs",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("simulate", help="degrade a scene to build a training pair")
    p.add_argument("--scene", required=True, help="scene manifest or directory holding manifest.txt")
    p.add_argument("--scale", type=int, choices=(2, 6), required=True)
    p.add_argument("--sigma", type=_positive_float, default=None, help="blur std in target pixels (default 1/scale)")
    p.add_argument("--out", required=True, help="output directory (input/, targets/, provenance.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-patches", help="sample training patches from simulated scenes")
    p.add_argument("--sim", required=True, action="append", help="simulate output directory; repeatable")
    p.add_argument("--n", type=_positive_int, required=True, help="patches per scene")
    p.add_argument("--patch-size", type=_positive_int, default=None, help="default 32 (2x) or 96 (6x)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="patch file")
    p.set_defaults(func=cmd_make_patches)

    p = sub.add_parser("train", help="train a network on a patch file")
    p.add_argument("--patches", required=True)
    p.add_argument("--d", type=_positive_int, default=6, help="residual blocks")
    p.add_argument("--f", type=_positive_int, default=128, help="feature maps")
    p.add_argument("--scale", type=int, choices=(2, 6), default=2)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=_positive_float, default=1e-4)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--val-fraction", type=float, default=0.9, help="fraction kept for training")
    p.add_argument("--max-seconds", type=_positive_float, default=None, help="wall-clock budget")
    p.add_argument("--upsampling", choices=("bilinear", "bicubic"), default="bilinear")
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--history", default=None, help="history table path (default: <out-ckpt>.history.txt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("superres", help="super-resolve a scene to the finest GSD")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt2x", required=True)
    p.add_argument("--ckpt6x", default=None)
    p.add_argument("--tile", type=_positive_int, default=512, help="tile edge in output pixels")
    p.add_argument("--overlap", type=_positive_int, default=2, help="per-side overlap in low-res pixels")
    p.add_argument("--literal-overlap", action="store_true", help="do not widen the overlap to the receptive field")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("evaluate", help="compare predicted bands with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-report", default=None, help="key:value report path; the table goes to <path>.table.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("info", help="describe a scene, checkpoint or patch file")
    p.add_argument("--scene", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--patches", default=None)
    p.set_defaults(func=cmd_info)
    return parser


def _thread_count(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("S2SR_THREADS")
    if env:
        try:
            return _positive_int(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise DomainError(f"S2SR_THREADS must be a positive integer, got {env!r}")
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "info" and not (args.scene or args.ckpt or args.patches):
        parser.print_usage(sys.stderr)
        sys.stderr.write("s2sr info: give at least one of --scene, --ckpt, --patches\n")
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        threads = _thread_count(args)
        with threadpool_limits(limits=threads):
            return args.func(args)
    except NonFiniteLoss as exc:
        sys.stderr.write(f"s2sr: training diverged at epoch {exc.epoch}: {exc}\n")
        return EXIT_NONFINITE
    except DomainError as exc:
        sys.stderr.write(f"s2sr: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"s2sr: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA
    except (S2SRError, OSError) as exc:
        sys.stderr.write(f"s2sr: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA if isinstance(exc, OSError) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"s2sr: internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
