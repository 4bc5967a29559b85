"""Command-line entry point: ``quanta-video {simulate,restore,evaluate,tradeoff,bench}``.

Settings resolve as command-line flag > ``--config`` file (``key=value`` lines,
keys named like the long flags without dashes, e.g. ``read_noise=0.2``) >
built-in default.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import quanta_io as qio
from .flow import FlowParams
from .fuse import STAGES, RestoreParams, Restorer
from .metrics import FrameMetrics, MetricsReport, bicubic_downsample, multiscale_loss, psnr_with_flag, ssim
from .sensor import SensorConfig, scale_luminance, simulate_frame, tradeoff_row

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
IMAGE_SUFFIXES = (".png", ".pgm")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- settings -----------------------------------------------------------------

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "ppp": 3.25,
    "nbits": 3,
    "fps": 2000.0,
    "qe": 0.80,
    "dark": 1.6,
    "read_noise": 0.2,
    "window": 11,
    "prefilter_window": 3,
    "prefilter_strength": RestoreParams.prefilter_strength,
    "refine_strength": RestoreParams.refine_strength,
    "tile": 16,
    "flow_tile": 32,
    "levels": 3,
    "search": 4,
    "refine_radius": 2,
    "subpixel": False,
    "tau": RestoreParams.consistency_tau,
    "mismatch_scale": 1.0,
    "unsharp_amount": 0.5,
    "unsharp_radius": 1.5,
    "normalization": 2.0,
    "response": "invert",
    "frames": None,
    "display": False,
    "metrics": "psnr,ssim,msloss",
    "normalize_gt": False,
    "base_fps": 10_000.0,
    "sigma": 0.2,
    "npixels": 9600,
    "repeat": 1,
    "warmup": 1,
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None}
_TYPES["tau"] = float
_TYPES["frames"] = str


def _coerce(key: str, value: str):
    kind = _TYPES.get(key, str)
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {value!r}")
    if key == "tau" and value.lower() in ("none", "off", ""):
        return None
    try:
        return kind(value)
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from exc


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    try:
        blocks = qio.parse_key_values(text)
    except qio.ManifestError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    for _, block in blocks:
        for key, (_, value) in block.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(load_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return settings


def sensor_from(settings: dict, nbits=None, fps=None) -> SensorConfig:
    try:
        return SensorConfig(
            qe=settings["qe"],
            dark_current=settings["dark"],
            read_noise=settings["read_noise"],
            nbits=int(nbits if nbits is not None else settings["nbits"]),
            fps=float(fps if fps is not None else settings["fps"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def restore_params_from(settings: dict) -> RestoreParams:
    try:
        return RestoreParams(
            window_frames=settings["window"],
            prefilter_window=settings["prefilter_window"],
            prefilter_strength=settings["prefilter_strength"],
            refine_strength=settings["refine_strength"],
            flow=FlowParams(
                tile_size=settings["flow_tile"],
                search_radius=settings["search"],
                refine_radius=settings["refine_radius"],
                levels=settings["levels"],
                subpixel=settings["subpixel"],
            ),
            merge_tile=settings["tile"],
            mismatch_scale=settings["mismatch_scale"],
            consistency_tau=settings["tau"],
            unsharp_amount=settings["unsharp_amount"],
            unsharp_radius=settings["unsharp_radius"],
            normalization=settings["normalization"],
            response=settings["response"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def parse_frames(spec: str | None, n: int) -> list[int]:
    """``a:b:step`` (Python slice semantics) or a single index; ``None`` means all."""
    if spec is None:
        return list(range(n))
    parts = spec.split(":")
    try:
        if len(parts) == 1:
            idx = int(parts[0])
            if not 0 <= idx < n:
                raise UsageError(f"frame {idx} outside stream of {n} frames")
            return [idx]
        if len(parts) > 3:
            raise ValueError(spec)
        nums = [int(p) if p else None for p in parts]
    except ValueError as exc:
        raise UsageError(f"bad --frames value {spec!r}") from exc
    if len(nums) == 3 and nums[2] is not None and nums[2] <= 0:
        raise UsageError("--frames step must be positive")
    return list(range(n))[slice(*nums)]


def frame_number(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if not m:
        raise DataError(f"{path.name}: file name has no trailing frame number")
    return int(m.group(1))


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no .png/.pgm images in {d}")
    return files


def _read_image(path) -> np.ndarray:
    try:
        return qio.read_groundtruth(path)
    except (OSError, qio.ImageFormatError) as exc:
        raise DataError(str(exc)) from exc


def _pool_map(fn, items, threads: int):
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- commands -----------------------------------------------------------------

def cmd_simulate(inputs, out, settings: dict) -> qio.StreamHeader:
    """Simulate a QVS stream from ground-truth frames (a directory or a list of files).

    Exposure is scaled so the whole clip averages ``ppp`` photons per pixel per
    frame; frame ``i`` is drawn with counter index ``i``.
    """
    paths = list_images(inputs) if isinstance(inputs, (str, Path)) else [Path(p) for p in inputs]
    gts = [_read_image(p) for p in paths]
    shapes = {g.shape for g in gts}
    if len(shapes) != 1:
        raise DataError(f"ground-truth frames have mixed dimensions: {sorted(shapes)}")
    cfg = sensor_from(settings)
    if settings["ppp"] < 0:
        raise UsageError("--ppp must be >= 0")
    stack = np.stack(gts)
    exposure = np.zeros_like(stack) if settings["ppp"] == 0 or stack.max() == 0 else scale_luminance(stack, settings["ppp"])
    seed = settings["seed"]
    frames = _pool_map(lambda i: simulate_frame(exposure[i], cfg, seed, i), range(len(gts)), settings["threads"])
    h, w = stack.shape[1:]
    header = qio.StreamHeader(w, h, cfg.nbits, len(frames), cfg.fps, settings["ppp"])
    qio.save_stream(out, frames, header)
    return header


@dataclass
class RestoreRun:
    indices: list[int]
    flags: dict[int, list[str]]
    timings: dict[str, float]


def cmd_restore(stream_path, out_dir, settings: dict) -> RestoreRun:
    """Restore the selected frames of a stream into ``out_dir``.

    Writes ``restored_NNNNN.png`` (16-bit linear), optionally
    ``display_NNNNN.png`` (8-bit, gamma 2.2) and ``run_manifest.json``.
    """
    try:
        header, frames = qio.load_stream(stream_path)
    except qio.StreamError as exc:
        raise DataError(f"{stream_path}: {exc}") from exc
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if header.frame_count == 0:
        raise DataError(f"{stream_path}: stream has no frames")
    cfg = sensor_from(settings, nbits=header.nbits, fps=header.fps)
    params = restore_params_from(settings)
    indices = parse_frames(settings["frames"], header.frame_count)
    ppp = float(header.nominal_ppp)
    if ppp <= 0:
        raise DataError("stream header has non-positive nominal ppp; cannot normalize")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    restorer = Restorer(frames, cfg, ppp, params)

    def work(t):
        result = restorer.restore(t)
        qio.write_linear16(result.image, out / f"restored_{t:05d}.png")
        if settings["display"]:
            qio.export_display(result.image, out / f"display_{t:05d}.png")
        return t, list(result.flags)

    flags = dict(_pool_map(work, indices, settings["threads"]))
    manifest = {
        "tool": "quanta-video",
        "version": __version__,
        "stream": str(Path(stream_path).name),
        "header": asdict(header),
        "sensor": asdict(cfg),
        "restore_params": asdict(params),
        "seed": settings["seed"],
        "config": {k: v for k, v in sorted(settings.items()) if k != "threads"},
        "frames": indices,
        "flags": {str(k): v for k, v in sorted(flags.items())},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RestoreRun(indices, flags, dict(restorer.timings))


def cmd_evaluate(pred_dir, gt_dir, settings: dict, out=None) -> MetricsReport:
    """Per-frame PSNR / SSIM / multi-scale loss between matching frame numbers."""
    wanted = {m.strip() for m in settings["metrics"].split(",") if m.strip()}
    unknown = wanted - {"psnr", "ssim", "msloss"}
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(sorted(unknown))}")
    preds = {frame_number(p): p for p in list_images(pred_dir)}
    gts = {frame_number(p): p for p in list_images(gt_dir)}
    if preds.keys() != gts.keys():
        extra_p = sorted(preds.keys() - gts.keys())
        extra_g = sorted(gts.keys() - preds.keys())
        raise DataError(f"frame mismatch: only in predictions {extra_p}, only in ground truth {extra_g}")
    keys = sorted(preds)
    gt_imgs = {k: _read_image(gts[k]) for k in keys}
    if settings["normalize_gt"]:
        mean = float(np.mean([g.mean() for g in gt_imgs.values()]))
        if mean > 0:
            gt_imgs = {k: np.clip(g / (settings["normalization"] * mean), 0, 1) for k, g in gt_imgs.items()}
    report = MetricsReport()
    for k in keys:
        pred = _read_image(preds[k])
        gt = gt_imgs[k]
        if pred.shape != gt.shape:
            raise DataError(f"frame {k}: prediction {pred.shape} vs ground truth {gt.shape}")
        p, exact = psnr_with_flag(pred, gt) if "psnr" in wanted else (float("nan"), False)
        s = ssim(pred, gt) if "ssim" in wanted else float("nan")
        loss = None
        if "msloss" in wanted:
            loss = multiscale_loss(
                gt, pred, bicubic_downsample(pred, 2), bicubic_downsample(pred, 4)
            ).total
        report.add(FrameMetrics(k, p, s, loss, exact))
    if out is not None:
        Path(out).write_text(report.to_csv())
    return report


def cmd_tradeoff(settings: dict, nbits_list) -> str:
    rows = [tradeoff_row(n, settings["base_fps"], settings["sigma"], settings["npixels"]) for n in nbits_list]
    lines = ["nbits,fps,read_noise_e_per_pix_per_s,data_rate_mbps"]
    lines += [f"{r.nbits},{r.fps},{r.read_noise_rate:.4f},{r.data_rate:.4f}" for r in rows]
    return "\n".join(lines) + "\n"


def format_tradeoff_table(csv_text: str) -> str:
    rows = [line.split(",") for line in csv_text.strip().splitlines()]
    header = ["bits", "fps", "read noise (e-/pix/s)", "data rate (Mb/s)"]
    body = [[r[0], r[1], f"{float(r[2]):.1f}", f"{float(r[3]):.2f}"] for r in rows[1:]]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join(fmt.format(*r) for r in [header, *body]) + "\n"


def cmd_bench(stream_path, settings: dict) -> dict:
    """Time the restorer per stage; warm-up passes are excluded."""
    header, frames = qio.load_stream(stream_path)
    cfg = sensor_from(settings, nbits=header.nbits, fps=header.fps)
    params = restore_params_from(settings)
    indices = parse_frames(settings["frames"], header.frame_count)
    ppp = float(header.nominal_ppp) or 1.0
    for _ in range(settings["warmup"]):
        Restorer(frames, cfg, ppp, params).restore(indices[0])
    totals = dict.fromkeys(STAGES, 0.0)
    t0 = time.perf_counter()
    for _ in range(settings["repeat"]):
        restorer = Restorer(frames, cfg, ppp, params)
        for t in indices:
            restorer.restore(t)
        for k, v in restorer.timings.items():
            totals[k] += v
    wall = time.perf_counter() - t0
    n_out = len(indices) * settings["repeat"]
    bits_in = n_out * header.width * header.height * header.nbits
    return {
        "frames": n_out,
        "wall_s": wall,
        "frames_per_s": n_out / wall if wall > 0 else float("inf"),
        "mbps_processed": bits_in / wall / 1e6 if wall > 0 else float("inf"),
        "sensor_mbps": header.nbits * header.fps * header.width * header.height / 1e6,
        "stages_s": totals,
    }


# -- argument parsing -----------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)


def _sensor_flags(p):
    p.add_argument("--qe", type=float)
    p.add_argument("--dark", type=float, help="dark current, e-/pix/s")
    p.add_argument("--read-noise", dest="read_noise", type=float, help="e- RMS per readout")


def _restore_flags(p):
    _sensor_flags(p)
    p.add_argument("--window", type=int, help="frames per restored output (odd)")
    p.add_argument("--prefilter-window", dest="prefilter_window", type=int)
    p.add_argument("--prefilter-strength", dest="prefilter_strength", type=float)
    p.add_argument("--refine-strength", dest="refine_strength", type=float)
    p.add_argument("--tile", type=int, help="merge tile size (even)")
    p.add_argument("--flow-tile", dest="flow_tile", type=int, help="block-matching tile size")
    p.add_argument("--levels", type=int)
    p.add_argument("--search", type=int, help="coarsest-level search radius")
    p.add_argument("--refine-radius", dest="refine_radius", type=int)
    p.add_argument("--subpixel", action="store_true", default=None)
    p.add_argument("--tau", type=lambda v: _coerce("tau", v), help="consistency threshold (px) or 'none'")
    p.add_argument("--mismatch-scale", dest="mismatch_scale", type=float)
    p.add_argument("--unsharp-amount", dest="unsharp_amount", type=float)
    p.add_argument("--unsharp-radius", dest="unsharp_radius", type=float)
    p.add_argument("--normalization", type=float)
    p.add_argument("--response", choices=("invert", "linear"))
    p.add_argument("--frames", help="a:b:step subset of frame indices")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quanta-video", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a quanta stream from ground-truth frames")
    _common(p)
    _sensor_flags(p)
    p.add_argument("inputs", nargs="+", help="directory of frames, or frame files")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--ppp", type=float)
    p.add_argument("--nbits", type=int)
    p.add_argument("--fps", type=float)

    p = sub.add_parser("restore", help="restore frames from a quanta stream")
    _common(p)
    _restore_flags(p)
    p.add_argument("stream")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--display", action="store_true", default=None, help="also write gamma-encoded 8-bit frames")

    p = sub.add_parser("evaluate", help="score restored frames against ground truth")
    _common(p)
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("-o", "--out", help="CSV report path (default: stdout)")
    p.add_argument("--metrics", help="comma list of psnr,ssim,msloss")
    p.add_argument("--normalize-gt", dest="normalize_gt", action="store_true", default=None)
    p.add_argument("--normalization", type=float)

    p = sub.add_parser("tradeoff", help="bit depth vs frame rate, read noise and data rate")
    _common(p)
    p.add_argument("--nbits", default="1,3,5,7,9", help="comma list of bit depths")
    p.add_argument("--base-fps", dest="base_fps", type=float)
    p.add_argument("--sigma", type=float, help="read noise per readout (e-)")
    p.add_argument("--npixels", type=int)
    p.add_argument("--csv", help="also write the table as CSV here")

    p = sub.add_parser("bench", help="time the restorer on a stream")
    _common(p)
    _restore_flags(p)
    p.add_argument("stream")
    p.add_argument("--repeat", type=int)
    p.add_argument("--warmup", type=int)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "tradeoff":
            nbits_arg = args.nbits
            args.nbits = None
        settings = resolve(args)
        if args.command == "simulate":
            inputs = args.inputs[0] if len(args.inputs) == 1 and Path(args.inputs[0]).is_dir() else args.inputs
            header = cmd_simulate(inputs, args.out, settings)
            print(f"wrote {header.frame_count} frames ({header.width}x{header.height}, {header.nbits}-bit) to {args.out}")
        elif args.command == "restore":
            run = cmd_restore(args.stream, args.out, settings)
            print(f"restored {len(run.indices)} frames into {args.out}")
        elif args.command == "evaluate":
            report = cmd_evaluate(args.pred_dir, args.gt_dir, settings, args.out)
            if args.out is None:
                sys.stdout.write(report.to_csv())
            else:
                agg = report.aggregate()
                print(", ".join(f"{k} {m:.4f} +/- {s:.4f}" for k, (m, s) in agg.items()))
        elif args.command == "tradeoff":
            try:
                nbits_list = [int(x) for x in nbits_arg.split(",") if x.strip()]
            except ValueError as exc:
                raise UsageError(f"bad --nbits list {nbits_arg!r}") from exc
            if not nbits_list or min(nbits_list) < 1:
                raise UsageError("--nbits needs positive integers")
            text = cmd_tradeoff(settings, nbits_list)
            sys.stdout.write(format_tradeoff_table(text))
            if args.csv:
                Path(args.csv).write_text(text)
        elif args.command == "bench":
            report = cmd_bench(args.stream, settings)
            print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, qio.StreamError, qio.ImageFormatError, qio.ManifestError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _entry():
    sys.exit(main())


if __name__ == "__main__":
    _entry()
