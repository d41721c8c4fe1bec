"""Command-line entry point: ``spac derain | synth | eval | align-bench``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    METHODS,
    InvalidInputError,
    SpacConfig,
    list_image_files,
    load_masks,
    load_sequence,
    save_mask,
    save_sequence,
)

log = logging.getLogger("spac")

EXIT_IO = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


@contextmanager
def staged_output(out: Path):
    """Write into a temporary sibling directory and move it into place on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        for item in tmp.iterdir():
            dest = out / item.name
            if dest.is_dir():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            shutil.move(str(item), dest)
        tmp.rmdir()
    else:
        os.replace(tmp, out)


class Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t


def write_manifest(path: Path, command: str, args: argparse.Namespace, timer: Timer, **extra) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "argv": getattr(args, "argv", None),
        "seed": getattr(args, "seed", None),
        "wall_clock_s": {k: round(v, 4) for k, v in timer.stages.items()},
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def _json_num(x: float):
    return "inf" if math.isinf(x) else (None if math.isnan(x) else round(x, 6))


def build_config(args) -> SpacConfig:
    cfg = SpacConfig()
    if args.config:
        cfg = SpacConfig.from_file(args.config, cfg)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.method is not None:
        overrides["method"] = args.method
    if args.prealign:
        overrides["prealign"] = True
    return SpacConfig.from_mapping(overrides, cfg)


def cmd_derain(args) -> int:
    from .derain import derain_video

    cfg = build_config(args)
    timer = Timer()
    with timer.stage("load"):
        frames = load_sequence(args.input, args.width, args.height)
    log.info("derain: %d frames, method=%s", len(frames), cfg.method)

    dump = Path(args.dump_dir) if args.dump_dir else None
    with staged_output(Path(args.out)) as tmp:
        def on_frame(i, frame, diag):
            log.info("frame %d: %d regions, %d rain px", i, diag.regions, diag.rain_pixels)
            if dump is not None:
                dump.mkdir(parents=True, exist_ok=True)
                save_mask(diag.rain_map, dump / f"rain_{i:06d}.png")
                with open(dump / f"matches_{i:06d}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["label", "t", "u", "v", "cost"])
                    w.writerows(diag.matches)

        with timer.stage("derain"):
            out, diags = derain_video(
                frames, cfg, threads=args.threads, record_matches=dump is not None, on_frame=on_frame
            )
        with timer.stage("save"):
            save_sequence(out, tmp)
        per_frame = [d.to_dict() for d in diags]
        diagnostics = {
            "frames": per_frame,
            "totals": {
                "regions": sum(d.regions for d in diags),
                "fallback_regions": sum(d.fallback_regions for d in diags),
                "rpca_iterations": sum(d.rpca_iterations for d in diags),
                "rpca_nonconverged": sum(d.rpca_nonconverged for d in diags),
            },
        }
        (tmp / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, default=_json_default) + "\n")
        write_manifest(
            tmp / "manifest.json", "derain", args, timer,
            config=cfg.to_dict(), inputs={"frames": str(args.input)}, outputs={"frames": str(args.out)},
        )
    return 0


def cmd_synth(args) -> int:
    from .core import load_image, rgb_to_ycbcr
    from .synth import Layer, RainParams, blob_alpha, procedural_scene, procedural_texture, synth_translating_sequence

    timer = Timer()
    w, h = args.size
    dx, dy = args.shift
    n = args.frames
    if n < 1 or w < 1 or h < 1:
        raise UsageError("--frames and --size must be positive")
    with timer.stage("base"):
        if args.base:
            base_path = Path(args.base)
            if not base_path.is_file():
                raise FileNotFoundError(f"base image not found: {base_path}")
            base = load_image(base_path)
        else:
            base = procedural_scene(h + abs(dy) * (n - 1) + 8, w + abs(dx) * (n - 1) + 8, seed=args.seed)

    if args.coverage is not None:
        rain = RainParams.for_coverage(
            args.coverage, length_px=tuple(args.length), width_px=tuple(args.streak_width),
            angle_deg=args.angle, angle_jitter_deg=args.jitter, amplitude=args.amplitude,
            opacity=args.opacity, seed=args.seed,
        )
    else:
        rain = RainParams(
            density=args.density, length_px=tuple(args.length), width_px=tuple(args.streak_width),
            angle_deg=args.angle, angle_jitter_deg=args.jitter, amplitude=args.amplitude,
            opacity=args.opacity, seed=args.seed,
        )

    layers = ()
    if args.parallax:
        rng = np.random.default_rng([args.seed, 1])
        lw, lh = w + abs(dx) * args.parallax * (n - 1) + 8, h + abs(dy) * args.parallax * (n - 1) + 8
        tex = np.clip(0.3 + 0.5 * procedural_texture(lh, lw, rng), 0, 1)
        fg = rgb_to_ycbcr(np.rint(tex * 255).astype(np.uint8))
        layers = (Layer(fg, blob_alpha(lh, lw, rng, 6, (10.0, 30.0)), args.parallax),)

    with timer.stage("render"):
        scene = synth_translating_sequence(base, n, (dx, dy), (w, h), layers, rain)
    with staged_output(Path(args.out)) as tmp:
        with timer.stage("save"):
            save_sequence(scene.clean, tmp / "clean")
            save_sequence(scene.rainy, tmp / "rainy")
            (tmp / "masks").mkdir()
            for i, m in enumerate(scene.masks):
                save_mask(m, tmp / "masks" / f"{i:06d}.png")
        write_manifest(
            tmp / "manifest.json", "synth", args, timer,
            rain=rain.to_dict(), frame_seeds=scene.seeds, shifts=scene.shifts, origin=scene.origin,
            layer_shifts=scene.layer_shifts, size=[w, h], base=str(args.base) if args.base else "procedural",
            mask_coverage=[round(float(m.mean()), 6) for m in scene.masks],
        )
    return 0


def cmd_eval(args) -> int:
    from .evaluation import pr_curve, psnr, ssim

    timer = Timer()
    with timer.stage("load"):
        clean = load_sequence(args.clean, args.width, args.height)
        derained = load_sequence(args.derained, args.width, args.height)
        rainy = load_sequence(args.rainy, args.width, args.height) if args.rainy else None
        masks = load_masks(args.masks) if args.masks else None
    if len(clean) != len(derained) or (rainy is not None and len(rainy) != len(clean)) \
            or (masks is not None and len(masks) != len(clean)):
        raise UsageError("clean, derained, rainy and mask sequences must have the same frame count")
    if (rainy is None) != (masks is None):
        raise UsageError("--rainy and --masks must be given together")

    lo, hi = args.skip_edges, len(clean) - args.skip_edges
    if lo >= hi:
        raise UsageError("--skip-edges leaves no frames")
    thresholds = sorted(args.thresholds) if args.thresholds else [i / 255.0 for i in range(0, 64)]

    rows = []
    tp = fp = fn = None
    with timer.stage("metrics"):
        for i in range(lo, hi):
            row = {"frame": i, "psnr": psnr(derained[i], clean[i]), "ssim": ssim(derained[i], clean[i])}
            if rainy is not None:
                row["psnr_input"] = psnr(rainy[i], clean[i])
                curve = pr_curve(rainy[i], derained[i], masks[i], thresholds)
                tp = curve.tp if tp is None else tp + curve.tp
                fp = curve.fp if fp is None else fp + curve.fp
                fn = curve.fn if fn is None else fn + curve.fn
            rows.append(row)

    with staged_output(Path(args.out)) as tmp:
        fields = ["frame", "psnr", "ssim"] + (["psnr_input"] if rainy is not None else [])
        with open(tmp / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for r in rows:
                w.writerow([r["frame"]] + [_fmt(r[k]) for k in fields[1:]])
        summary = {
            "frames": len(rows),
            "mean_psnr": _json_num(float(np.mean([r["psnr"] for r in rows]))),
            "mean_ssim": _json_num(float(np.mean([r["ssim"] for r in rows]))),
            "per_frame": [{k: (_json_num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows],
        }
        if rainy is not None:
            summary["mean_psnr_input"] = _json_num(float(np.mean([r["psnr_input"] for r in rows])))
            with open(tmp / "pr.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["threshold", "precision", "recall"])
                for t, a, b, c in zip(thresholds, tp, fp, fn):
                    prec = 1.0 if a + b == 0 else a / (a + b)
                    rec = float("nan") if a + c == 0 else a / (a + c)
                    w.writerow([f"{t:.6f}", f"{prec:.6f}", f"{rec:.6f}"])
        (tmp / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
        write_manifest(
            tmp / "manifest.json", "eval", args, timer,
            inputs={"clean": args.clean, "derained": args.derained, "rainy": args.rainy, "masks": args.masks},
            thresholds=thresholds,
        )
    return 0


def cmd_alignbench(args) -> int:
    from .evaluation import align_bench
    from .synth import parallax_scene

    if args.views:
        scenes = [(Path(args.views).name, load_sequence(args.views, args.width, args.height))]
    else:
        scenes = [
            (f"seed{args.seed + i}", parallax_scene(args.seed + i, n_views=args.n_views).clean)
            for i in range(args.runs)
        ]
    block, sp = [], []
    for _, views in scenes:
        block.append(align_bench(views, "block", args.block_size, args.r_s))
        sp.append(align_bench(views, "sp", args.block_size, args.r_s, args.sp_count))
    names = [name for name, _ in scenes]
    if len(scenes) > 1:
        names.append("average")
        block.append(float(np.mean(block)))
        sp.append(float(np.mean(sp)))
    print(f"{'unit':<8}" + "".join(f"{n:>12}" for n in names))
    print(f"{'block':<8}" + "".join(f"{_fmt2(x):>12}" for x in block))
    print(f"{'SP':<8}" + "".join(f"{_fmt2(x):>12}" for x in sp))
    return 0


def _fmt2(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.2f}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spac", description="Superpixel-aligned video rain removal")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def raw_flags(sp):
        sp.add_argument("--width", type=int, help="frame width for raw I420 input")
        sp.add_argument("--height", type=int, help="frame height for raw I420 input")

    d = sub.add_parser("derain", help="derain a frame sequence")
    d.add_argument("--in", dest="input", required=True, help="PNG directory or raw I420 file")
    d.add_argument("--out", required=True)
    d.add_argument("--method", choices=METHODS)
    d.add_argument("--config", help="key=value file with SpacConfig fields")
    d.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    d.add_argument("--prealign", action="store_true", help="translational phase-correlation pre-alignment")
    d.add_argument("--threads", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--dump-dir", help="write per-frame rain masks and match CSVs here")
    raw_flags(d)
    d.set_defaults(func=cmd_derain)

    s = sub.add_parser("synth", help="generate a synthetic rainy sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--base", help="base image (default: procedural scene)")
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--size", type=int, nargs=2, default=(640, 480), metavar=("W", "H"))
    s.add_argument("--shift", type=int, nargs=2, default=(0, 0), metavar=("DX", "DY"))
    s.add_argument("--parallax", type=int, default=0, help="add a foreground layer with this parallax factor")
    s.add_argument("--coverage", type=float, default=0.02, help="target rain-mask coverage")
    s.add_argument("--density", type=float, help="streaks per megapixel (overrides --coverage)")
    s.add_argument("--length", type=float, nargs=2, default=(10.0, 30.0))
    s.add_argument("--streak-width", type=float, nargs=2, default=(1.0, 2.0))
    s.add_argument("--angle", type=float, default=10.0)
    s.add_argument("--jitter", type=float, default=5.0)
    s.add_argument("--amplitude", type=float, default=0.1)
    s.add_argument("--opacity", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1, help="accepted for symmetry; synthesis is sequential")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="PSNR/SSIM and rain-edge PR curves")
    e.add_argument("--clean", required=True)
    e.add_argument("--derained", required=True)
    e.add_argument("--rainy")
    e.add_argument("--masks")
    e.add_argument("--out", required=True)
    e.add_argument("--thresholds", type=float, nargs="+")
    e.add_argument("--skip-edges", type=int, default=0, help="ignore this many frames at each end")
    raw_flags(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("align-bench", help="superpixel vs block central-view reconstruction")
    a.add_argument("--views", help="directory of views (odd count); default: synthetic parallax scenes")
    a.add_argument("--block-size", type=int, default=16)
    a.add_argument("--sp-count", type=int)
    a.add_argument("--r-s", type=int, default=15)
    a.add_argument("--runs", type=int, default=1)
    a.add_argument("--n-views", type=int, default=7)
    a.add_argument("--seed", type=int, default=0)
    raw_flags(a)
    a.set_defaults(func=cmd_alignbench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "density", None) is not None:
        args.coverage = None
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        parser.print_usage(sys.stderr)
        print(f"spac {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"spac {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
