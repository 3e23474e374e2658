"""Command-line surface: train-shared, track, pseudolabel, eval, plot.

Every command reads its settings from the INI config (see the config module),
prints a one-line "ERROR: ..." diagnostic to stderr on failure, and exits
nonzero.  File outputs are deterministic: running a command twice with the
same inputs and seed produces byte-identical artifacts.
"""

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backbone import create_backbone
from .config import dump_defaults, load_config
from .core import BinaryMask, BoundingBox
from .evaluation import SequenceResult, evaluate
from .formats import (
    image_size,
    list_frame_files,
    load_attention,
    load_checkpoint,
    load_flow,
    load_frame,
    pack_artifacts,
    read_boxes,
    read_pseudolabels,
    read_results,
    save_attention,
    save_checkpoint,
    unpack_artifacts,
    write_pseudolabels,
    write_results,
)
from .prompt_learner import train_shared
from .pseudolabel import label_video
from .tracker import DiffTracker

__all__ = ["main", "build_parser"]

_OFFLINE_TIME = 1e-3  # nominal per-frame time for stored-trace evaluation


def _parse_box(text: str) -> BoundingBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"box {text!r} is not of the form x,y,w,h")
    return BoundingBox(*(float(p) for p in parts))


def _scale_box(box: BoundingBox, sx: float, sy: float) -> BoundingBox:
    return BoundingBox(box.x * sx, box.y * sy, box.w * sx, box.h * sy)


# --- train-shared -----------------------------------------------------------


def _sequence_dirs(root: Path) -> list:
    subs = sorted(d for d in root.iterdir() if d.is_dir())
    return subs if subs else [root]


def _load_training_pairs(root, resolution: int, frame_low: float) -> list:
    """(frame, mask) pairs from sequence directories of images plus labels.

    A sequence directory holds frames and either pseudolabels.txt (frames
    below frame_low quality are dropped) or groundtruth.txt.  Boxes are in
    original pixel coordinates; frames are resized to the backbone input.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"training data directory not found: {root}")
    pairs = []
    for seq in _sequence_dirs(root):
        files = list_frame_files(seq)
        if (seq / "pseudolabels.txt").exists():
            boxes, qualities = read_pseudolabels(seq / "pseudolabels.txt")
        elif (seq / "groundtruth.txt").exists():
            boxes, qualities = read_boxes(seq / "groundtruth.txt"), None
        else:
            raise ValueError(f"{seq}: no pseudolabels.txt or groundtruth.txt")
        if len(boxes) != len(files):
            raise ValueError(f"{seq}: {len(files)} frames but {len(boxes)} boxes")
        ow, oh = image_size(files[0])
        sx, sy = resolution / ow, resolution / oh
        for i, (path, box) in enumerate(zip(files, boxes)):
            if qualities is not None and qualities[i] < frame_low:
                continue
            frame = load_frame(path, resolution=resolution)
            clamped = _scale_box(box, sx, sy).clamp(resolution, resolution)
            pairs.append((frame, BinaryMask.from_box(resolution, resolution, clamped)))
    if not pairs:
        raise ValueError(f"{root}: every frame was filtered out")
    return pairs


def _synthetic_pairs(count: int, resolution: int, seed: int) -> list:
    from .synthetic import make_scene, render_scene, scene_masks

    pairs = []
    for i in range(count):
        spec = make_scene(seed=seed + i, n_frames=3, resolution=resolution)
        frames, _ = render_scene(spec)
        pairs.extend(zip(frames, scene_masks(spec)))
    return pairs


def cmd_train_shared(args) -> int:
    cfg = load_config(args.config)
    backbone = create_backbone(cfg.backbone)
    if args.synthetic:
        pairs = _synthetic_pairs(args.synthetic, backbone.input_resolution,
                                 cfg.backbone.seed)
    elif cfg.learner.data:
        pairs = _load_training_pairs(cfg.learner.data, backbone.input_resolution,
                                     cfg.pseudolabel.frame_low)
    else:
        raise ValueError("no training data: set [learner] data or pass --synthetic N")

    init = motion = blend = None
    if args.resume:
        if not Path(args.out).exists():
            raise ValueError(f"cannot resume, checkpoint not found: {args.out}")
        init, motion, blend = unpack_artifacts(load_checkpoint(args.out))
    shared = train_shared(pairs, backbone, cfg.learner.to_train_config(), init=init)
    first = len(init.epoch_losses) if init is not None else 0
    for epoch, loss in enumerate(shared.epoch_losses[first:], start=first + 1):
        print(f"epoch {epoch}: loss {loss:.6f}")
    save_checkpoint(args.out, pack_artifacts(shared, motion, blend))
    print(f"wrote {args.out}")
    return 0


# --- track ------------------------------------------------------------------


def cmd_track(args) -> int:
    cfg = load_config(args.config)
    if not Path(args.checkpoint).exists():
        raise ValueError(f"checkpoint not found: {args.checkpoint}")
    backbone = create_backbone(cfg.backbone)
    shared, motion, blend = unpack_artifacts(load_checkpoint(args.checkpoint))

    files = list_frame_files(args.frames)
    if args.init:
        init_box = _parse_box(args.init)
    elif args.gt:
        init_box = read_boxes(args.gt)[0]
    else:
        raise ValueError("need --init x,y,w,h or --gt file for the first frame")

    res = backbone.input_resolution
    ow, oh = image_size(files[0])
    sx, sy = res / ow, res / oh
    frames = [load_frame(p, resolution=res) for p in files]

    tracker = DiffTracker(
        backbone, shared, motion=motion, blend=blend,
        schedule=cfg.updater.to_schedule(), adapt=cfg.learner.to_train_config(),
        tau=cfg.updater.tau, window=cfg.updater.window, seed=cfg.backbone.seed)

    dump_dir = None
    if args.dump_attention:
        dump_dir = Path(args.dump_attention)
        dump_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    tracker.reset(frames[0], _scale_box(init_box, sx, sy), 0)
    entries = [(0, init_box)]
    for k in range(1, len(frames)):
        box = tracker.update(frames[k], k)
        entries.append((k, _scale_box(box, 1.0 / sx, 1.0 / sy)))
        if dump_dir is not None:
            save_attention(dump_dir / f"{k:06d}.attn", tracker.last_map)
    elapsed = time.perf_counter() - started

    write_results(args.out, entries,
                  comments=(f"difftrack seed={cfg.backbone.seed}",))
    print(f"tracked {len(frames)} frames in {elapsed:.2f}s -> {args.out}")
    return 0


# --- pseudolabel ------------------------------------------------------------


def _label_flow_dir(flow_dir: Path, kwargs: dict):
    files = sorted(flow_dir.glob("*.flow"))
    if not files:
        raise ValueError(f"{flow_dir}: no .flow files")
    flows = [load_flow(p) for p in files]
    return label_video(flows, **kwargs)


def cmd_pseudolabel(args) -> int:
    cfg = load_config(args.config)
    kwargs = cfg.pseudolabel.kwargs()
    root = Path(args.flows)
    if not root.is_dir():
        raise ValueError(f"flow directory not found: {root}")
    subs = sorted(d for d in root.iterdir() if d.is_dir())

    if not subs:
        trajectory, report = _label_flow_dir(root, kwargs)
        write_pseudolabels(args.out, trajectory, report)
        print(f"{root.name}: score {report.video_score:.4f} "
              f"{'kept' if report.keep else 'discarded'} -> {args.out}")
        return 0

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        labeled = list(pool.map(lambda d: _label_flow_dir(d, kwargs), subs))
    for sub, (trajectory, report) in zip(subs, labeled):
        path = out_dir / f"{sub.name}.txt"
        write_pseudolabels(path, trajectory, report)
        print(f"{sub.name}: score {report.video_score:.4f} "
              f"{'kept' if report.keep else 'discarded'} -> {path}")
    return 0


# --- eval -------------------------------------------------------------------


def _load_sequence_result(res_path: Path, gt_path: Path) -> SequenceResult:
    if not gt_path.exists():
        raise ValueError(f"missing ground truth for {res_path.stem}: {gt_path}")
    pred = [box for _, box in read_results(res_path)]
    gt = read_boxes(gt_path)
    if len(pred) != len(gt):
        raise ValueError(f"{res_path.stem}: {len(pred)} predictions "
                         f"but {len(gt)} ground-truth boxes")
    return SequenceResult(pred, gt, [_OFFLINE_TIME] * len(pred))


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    protocol = args.protocol or cfg.eval.protocol
    if protocol not in ("otb", "vot"):
        raise ValueError(f"unknown protocol {protocol!r}")
    res_dir, gt_dir = Path(args.results), Path(args.gt)
    paths = sorted(res_dir.glob("*.txt"))
    if not paths:
        raise ValueError(f"no results files in {res_dir}")
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(
            lambda p: _load_sequence_result(p, gt_dir / p.name), paths))
    report = evaluate(results, (cfg.eval.eao_lo, cfg.eval.eao_hi), cfg.eval.radius)

    print(f"sequences: {len(results)}  protocol: {protocol}")
    order = (("suc", "pre", "npre", "acc", "rob", "eao") if protocol == "otb"
             else ("acc", "rob", "eao", "suc", "pre", "npre"))
    for name in order:
        print(f"{name}: {getattr(report, name):.4f}")
    print("fps: n/a (stored results)")
    return 0


# --- plot -------------------------------------------------------------------


def cmd_plot(args) -> int:
    from .plotting import attention_overlay, precision_figure, success_figure

    if args.attention:
        if not args.frame:
            raise ValueError("--attention needs --frame for the underlay image")
        amap = load_attention(args.attention)
        frame = load_frame(args.frame)
        box = _parse_box(args.box) if args.box else None
        attention_overlay(frame, amap, args.out, box=box)
        print(f"wrote {args.out}")
        return 0

    if not args.results_files or not args.gt_files:
        raise ValueError("curves mode needs --results and --gt file lists")
    if len(args.results_files) != len(args.gt_files):
        raise ValueError("--results and --gt lists differ in length")
    named = {}
    for res_path, gt_path in zip(args.results_files, args.gt_files):
        named[Path(res_path).stem] = [
            _load_sequence_result(Path(res_path), Path(gt_path))]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    success_figure(named, out_dir / "success.png")
    precision_figure(named, out_dir / "precision.png")
    print(f"wrote {out_dir / 'success.png'} and {out_dir / 'precision.png'}")
    return 0


# --- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftrack",
        description="Unsupervised tracking from diffusion attention maps.")
    parser.add_argument("--write-config", action="store_true",
                        help="print the full default config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train-shared", help="offline shared-embedding training")
    p.add_argument("--config", default=None, help="INI config path")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--resume", action="store_true",
                   help="continue training from the checkpoint at --out")
    p.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="train on N generated scenes instead of [learner] data")
    p.set_defaults(func=cmd_train_shared)

    p = sub.add_parser("track", help="track one sequence from a first-frame box")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="directory of frame images")
    p.add_argument("--init", default=None, help="first-frame box x,y,w,h")
    p.add_argument("--gt", default=None,
                   help="box file whose first line initializes the tracker")
    p.add_argument("--out", required=True, help="results file to write")
    p.add_argument("--dump-attention", default=None, metavar="DIR",
                   help="write one .attn map per tracked frame")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("pseudolabel", help="boxes from optical-flow files")
    p.add_argument("--config", default=None)
    p.add_argument("--flows", required=True,
                   help="directory of .flow files, or of per-video subdirectories")
    p.add_argument("--out", required=True,
                   help="output file (single video) or directory (per-video)")
    p.add_argument("--jobs", type=int, default=1, help="parallel videos")
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("eval", help="score stored results against ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--results", required=True, help="directory of results files")
    p.add_argument("--gt", required=True, help="directory of ground-truth files")
    p.add_argument("--protocol", choices=("otb", "vot"), default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel sequence loading")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="success/precision figures or attention overlays")
    p.add_argument("--results", dest="results_files", nargs="*", default=(),
                   help="results files, one curve each")
    p.add_argument("--gt", dest="gt_files", nargs="*", default=(),
                   help="matching ground-truth files")
    p.add_argument("--attention", default=None, help="a single .attn file to overlay")
    p.add_argument("--frame", default=None, help="image the overlay sits on")
    p.add_argument("--box", default=None, help="optional box to draw, x,y,w,h")
    p.add_argument("--out", required=True,
                   help="output directory (curves) or image file (overlay)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.write_config:
        print(dump_defaults())
        return 0
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
