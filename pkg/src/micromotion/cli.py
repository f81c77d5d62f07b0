"""Command line entry point wiring the pipeline stages together.

Subcommands: synth, filter, template, match, train1d, predict1d, train3d,
predict3d, densemap, score, map, report, selftest.

Every artifact-producing run writes a ``<output>.manifest`` text file next
to its primary output with the fully resolved configuration, SHA-256
hashes of the inputs, and the tool version, sufficient to re-run it
bit-exactly.  ``--threads 1`` pins the BLAS thread pools before NumPy is
imported (strict mode); heavier imports are deferred for that reason.

A ``--config FILE`` of ``key=value`` lines supplies defaults for the
chosen subcommand; explicit flags override file values.  Frame ranges are
zero-based half-open ``start:end`` (the one-based inclusive frame numbers
in the literature convert by subtracting one from the start).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path


def _pin_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_range(text: str) -> tuple[int, int]:
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:end, got {text!r}") from None


def _parse_roi(text: str):
    from .tensor_io import RoiRect

    try:
        x0, y0, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x0,y0,w,h, got {text!r}") from None
    return RoiRect(x0, y0, w, h)


def write_manifest(primary_output, command: str, args: argparse.Namespace,
                   inputs: dict) -> None:
    """Resolved config + input hashes + version, next to the primary output."""
    from . import __version__

    lines = [f"command={command}", f"version={__version__}"]
    skip = {"config", "func", "command"}
    for key in sorted(vars(args)):
        if key in skip:
            continue
        lines.append(f"arg.{key}={getattr(args, key)}")
    for name in sorted(inputs):
        lines.append(f"input.{name}.sha256={_sha256(inputs[name])}")
    Path(str(primary_output) + ".manifest").write_text("\n".join(lines) + "\n")


def split_dataset(video, train_range: tuple[int, int], val_range: tuple[int, int]):
    """Slice disjoint half-open frame ranges into (train, validation) videos."""
    from .tensor_io import slice_frames

    t0, t1 = train_range
    v0, v1 = val_range
    if max(t0, t1) > video.frames or max(v0, v1) > video.frames:
        raise ValueError("split range exceeds the recording")
    if t0 < v1 and v0 < t1:
        raise ValueError(f"ranges [{t0}, {t1}) and [{v0}, {v1}) overlap")
    return slice_frames(video, t0, t1), slice_frames(video, v0, v1)


def default_split(frames: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Validation prefix of ~29 percent, training the rest (train, val)."""
    val_end = max(1, round(frames * 3072 / 10570))
    return (val_end, frames), (0, val_end)


def _maybe_slice(video, frame_range):
    from .tensor_io import slice_frames

    if frame_range is None:
        return video
    return slice_frames(video, *frame_range)


def _maybe_slice_trace(trace, frame_range):
    from .tensor_io import Trace

    if frame_range is None:
        return trace
    start, end = frame_range
    if not 0 <= start < end <= trace.frames:
        raise ValueError(f"range [{start}, {end}) invalid for {trace.frames}-frame trace")
    return Trace(trace.data[start:end].copy(), trace.fps)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args) -> int:
    from . import synthgen
    from .tensor_io import write_spikes, write_trace, write_video

    if args.regions:
        regions = synthgen.read_regions(args.regions)
    else:
        strong = synthgen.STRONG_AMPLITUDE if args.strong_amp is None else args.strong_amp
        weak = synthgen.WEAK_AMPLITUDE if args.weak_amp is None else args.weak_amp
        regions = synthgen.default_regions(args.height, args.width,
                                           strong=strong, weak=weak)
    config = synthgen.SynthConfig(
        frames=args.frames, height=args.height, width=args.width, fps=args.fps,
        seed=args.seed, mean_spike_interval_s=args.mean_interval,
        refractory_s=args.refractory, full_well=args.full_well, regions=regions,
    )
    dataset = synthgen.gen_dataset(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_video(dataset.transmission, out / "transmission.mmv")
    write_trace(dataset.fluorescence_global, out / "fluorescence.csv")
    write_spikes(dataset.spikes, out / "spikes.csv")
    synthgen.write_regions(dataset.regions, out / "regions.csv")
    inputs = {"regions": args.regions} if args.regions else {}
    write_manifest(out / "synth", "synth", args, inputs)
    print(f"synth: wrote {len(dataset.spikes)} spikes, "
          f"{config.frames}x{config.height}x{config.width} video to {out}")
    return 0


def _cmd_filter(args) -> int:
    from .bandpass import BandpassSpec, bandpass_video
    from .tensor_io import read_video, write_video

    video = read_video(args.input)
    spec = BandpassSpec(f_lo=args.flo, f_hi=args.fhi, order=args.order, fps=video.fps)
    write_video(bandpass_video(video, spec), args.output)
    write_manifest(args.output, "filter", args, {"input": args.input})
    return 0


def _cmd_template(args) -> int:
    from .matched import SpikeDetectConfig, detect_spikes, extract_template
    from .tensor_io import VideoTensor, read_spikes, read_trace, read_video, write_video

    video = read_video(args.video)
    if args.spikes:
        spikes = read_spikes(args.spikes)
        spike_source = args.spikes
    elif args.fluor:
        cfg = SpikeDetectConfig(args.threshold_sigma, args.refractory_frames)
        spikes = detect_spikes(read_trace(args.fluor), cfg)
        spike_source = args.fluor
    else:
        print("template: need --spikes or --fluor", file=sys.stderr)
        return 2
    template = extract_template(video, spikes, args.window)
    write_video(VideoTensor(template.data, template.fps), args.output)
    Path(str(args.output) + ".meta").write_text(
        f"spike_count={template.spike_count}\nwindow={template.window}\n"
        f"source.sha256={_sha256(args.video)}\n"
    )
    write_manifest(args.output, "template", args,
                   {"video": args.video, "spikes": spike_source})
    print(f"template: averaged {template.spike_count} events")
    return 0


def _read_template(path):
    from .matched import TemplateTensor
    from .tensor_io import read_video

    video = read_video(path)
    spike_count = 1
    meta = Path(str(path) + ".meta")
    if meta.exists():
        for line in meta.read_text().splitlines():
            if line.startswith("spike_count="):
                spike_count = int(line.split("=", 1)[1])
    return TemplateTensor(video.data, video.fps, spike_count)


def _cmd_match(args) -> int:
    from .matched import matched_filter
    from .tensor_io import read_video, write_video

    video = read_video(args.video)
    template = _read_template(args.template)
    write_video(matched_filter(video, template), args.output)
    write_manifest(args.output, "match", args,
                   {"video": args.video, "template": args.template})
    return 0


def _cmd_train1d(args) -> int:
    from .netio import save_network
    from .nn1d import TrainConfig1D, train_1d
    from .tensor_io import read_trace, read_video

    video = _maybe_slice(read_video(args.video), args.train_range)
    target = _maybe_slice_trace(read_trace(args.target), args.train_range)
    cfg = TrainConfig1D(learning_rate=args.lr, epochs=args.epochs,
                        batch_pixels=args.batch, seed=args.seed)
    net, losses = train_1d(video, target, cfg)
    save_network(net, args.output)
    write_manifest(args.output, "train1d", args,
                   {"video": args.video, "target": args.target})
    for i, loss in enumerate(losses, start=1):
        print(f"epoch {i}: loss {loss:.6g}")
    return 0


def _cmd_predict1d(args) -> int:
    from .netio import load_network
    from .nn1d import Network1D, predict_1d
    from .tensor_io import read_video, write_video

    net = load_network(args.net)
    if not isinstance(net, Network1D):
        print(f"predict1d: {args.net} is not a 1D network", file=sys.stderr)
        return 2
    write_video(predict_1d(net, read_video(args.video)), args.output)
    write_manifest(args.output, "predict1d", args,
                   {"net": args.net, "video": args.video})
    return 0


def _cmd_train3d(args) -> int:
    from .net3d import TrainConfig3D, init_from_1d, train_3d
    from .netio import load_network, save_network
    from .nn1d import Network1D
    from .tensor_io import read_trace, read_video, slice_roi

    base = load_network(args.net1d)
    if not isinstance(base, Network1D):
        print(f"train3d: {args.net1d} is not a 1D network", file=sys.stderr)
        return 2
    video = read_video(args.video)
    if args.roi:
        video = slice_roi(video, args.roi)
    video = _maybe_slice(video, args.train_range)
    target = _maybe_slice_trace(read_trace(args.target), args.train_range)
    net = init_from_1d(base, video.height, video.width, args.dropout)
    cfg = TrainConfig3D(learning_rate=args.lr, epochs=args.epochs,
                        segment_frames=args.segment, seed=args.seed)
    net, losses = train_3d(video, target, net, cfg)
    save_network(net, args.output)
    write_manifest(args.output, "train3d", args,
                   {"video": args.video, "target": args.target, "net1d": args.net1d})
    print(f"train3d: epoch loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return 0


def _cmd_predict3d(args) -> int:
    from .net3d import Network3D, predict_3d
    from .netio import load_network
    from .tensor_io import read_video, slice_roi, write_trace

    net = load_network(args.net)
    if not isinstance(net, Network3D):
        print(f"predict3d: {args.net} is not a 3D network", file=sys.stderr)
        return 2
    video = read_video(args.video)
    if args.roi:
        video = slice_roi(video, args.roi)
    write_trace(predict_3d(net, video), args.output)
    write_manifest(args.output, "predict3d", args,
                   {"net": args.net, "video": args.video})
    return 0


def _cmd_densemap(args) -> int:
    from .evaluation import export_map_pgm
    from .net3d import Network3D, export_dense_map
    from .netio import load_network

    net = load_network(args.net)
    if not isinstance(net, Network3D):
        print(f"densemap: {args.net} is not a 3D network", file=sys.stderr)
        return 2
    maps = export_dense_map(net)
    for channel in range(3):
        export_map_pgm(maps[channel], f"{args.out_prefix}_ch{channel}.pgm",
                       lo=0.0, hi=1.0)
    write_manifest(f"{args.out_prefix}_densemap", "densemap", args, {"net": args.net})
    return 0


def _cmd_score(args) -> int:
    from .evaluation import correlation_score
    from .tensor_io import read_trace

    score = correlation_score(read_trace(args.pred), read_trace(args.target))
    print(f"{score:.6f}")
    return 0


def _cmd_map(args) -> int:
    from .evaluation import correlation_map, export_map_pgm
    from .tensor_io import read_trace, read_video

    cmap = correlation_map(read_video(args.pred), read_trace(args.target))
    export_map_pgm(cmap, args.output)
    write_manifest(args.output, "map", args,
                   {"pred": args.pred, "target": args.target})
    print(f"map: {cmap.meta['degenerate_pixels']} degenerate pixels flagged")
    return 0


def _cmd_report(args) -> int:
    from .evaluation import compare_methods, export_map_pgm
    from .synthgen import read_regions
    from .tensor_io import read_trace, read_video, slice_roi, write_trace

    target = read_trace(args.fluorescence)
    regions = read_regions(args.regions)
    methods = args.methods.split(",")

    pixelwise = {}
    for method, path in (("bandpass", args.bandpass), ("matched", args.matched),
                         ("cnn1d", args.cnn1d)):
        if method not in methods:
            continue
        if path is None:
            print(f"report: method {method!r} requested but no prediction file given",
                  file=sys.stderr)
            return 2
        pixelwise[method] = read_video(path)

    regional = {}
    if "cnn3d" in methods:
        per_region = {}
        for region in regions:
            path = getattr(args, f"cnn3d_{region.label}", None)
            if path is None:
                print(f"report: method 'cnn3d' requested but no trace for region "
                      f"{region.label!r}", file=sys.stderr)
                return 2
            per_region[region.label] = read_trace(path)
        regional["cnn3d"] = per_region

    if args.eval_range:
        target = _maybe_slice_trace(target, args.eval_range)
        pixelwise = {k: _maybe_slice(v, args.eval_range) for k, v in pixelwise.items()}
        regional = {k: {r: _maybe_slice_trace(t, args.eval_range) for r, t in v.items()}
                    for k, v in regional.items()}

    report = compare_methods(target, regions, pixelwise, regional,
                             null_trials=args.null_trials, null_seed=args.null_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.ranking_table())
    score_lines = ["method,roi,score,null_lo,null_hi"]
    for s in report.scores:
        score_lines.append(f"{s.method},{s.roi_label},{s.score:.9g},"
                           f"{s.null_lo:.9g},{s.null_hi:.9g}")
    (out / "scores.csv").write_text("\n".join(score_lines) + "\n")
    for (method, label), trace in report.traces.items():
        write_trace(trace, out / f"trace_{method}_{label}.csv")
    for method, cmap in report.maps.items():
        export_map_pgm(cmap, out / f"map_{method}.pgm")
    inputs = {}
    for name in ("fluorescence", "regions", "bandpass", "matched", "cnn1d",
                 "cnn3d_strong", "cnn3d_weak", "cnn3d_silent"):
        value = getattr(args, name, None)
        if value:
            inputs[name] = value
    write_manifest(out / "report", "report", args, inputs)
    print(report.ranking_table(), end="")
    return 0


def _cmd_selftest(args) -> int:
    from . import selftest

    return selftest.run()


# ---------------------------------------------------------------------------
# parser


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="micromotion",
        description="Micromotion detection pipeline: synthesize, filter, "
                    "train, predict, and score.",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    parsers: dict[str, argparse.ArgumentParser] = {}

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--threads", type=int, default=0,
                       help="BLAS threads; 1 = strict bit-reproducible mode, "
                            "0 = library default")
        p.add_argument("--config", default=None,
                       help="key=value file of defaults for this subcommand")
        p.set_defaults(func=handler)
        parsers[name] = p
        return p

    p = add("synth", _cmd_synth, "generate a synthetic paired dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=5000)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--fps", type=float, default=50.0)
    p.add_argument("--mean-interval", type=float, default=3.0,
                   help="mean spike interval in seconds")
    p.add_argument("--refractory", type=float, default=1.0)
    p.add_argument("--full-well", type=float, default=1e5)
    p.add_argument("--strong-amp", type=float, default=None)
    p.add_argument("--weak-amp", type=float, default=None)
    p.add_argument("--regions", default=None, help="regions.csv overriding the default layout")

    p = add("filter", _cmd_filter, "zero-phase temporal bandpass of a video")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--flo", type=float, default=2.0)
    p.add_argument("--fhi", type=float, default=15.0)
    p.add_argument("--order", type=int, default=4)

    p = add("template", _cmd_template, "spike-triggered average template")
    p.add_argument("--video", required=True, help="filtered transmission video")
    p.add_argument("--fluor", default=None, help="fluorescence trace to trigger on")
    p.add_argument("--spikes", default=None, help="spike CSV (overrides --fluor)")
    p.add_argument("--window", type=int, default=51)
    p.add_argument("--threshold-sigma", type=float, default=4.0)
    p.add_argument("--refractory-frames", type=int, default=25)
    p.add_argument("output")

    p = add("match", _cmd_match, "pixel-wise matched filtering")
    p.add_argument("--video", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("output")

    p = add("train1d", _cmd_train1d, "train the pixel-trace network")
    p.add_argument("--video", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-range", type=_parse_range, default=None,
                   help="half-open frame range start:end")
    p.add_argument("output")

    p = add("predict1d", _cmd_predict1d, "per-pixel predictions of a 1D network")
    p.add_argument("--net", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("output")

    p = add("train3d", _cmd_train3d, "transfer-train the region 3D network")
    p.add_argument("--video", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--net1d", required=True)
    p.add_argument("--roi", type=_parse_roi, default=None, help="x0,y0,w,h region")
    p.add_argument("--lr", type=float, default=8e-7)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--segment", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-range", type=_parse_range, default=None)
    p.add_argument("output")

    p = add("predict3d", _cmd_predict3d, "region trace prediction of a 3D network")
    p.add_argument("--net", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--roi", type=_parse_roi, default=None)
    p.add_argument("output")

    p = add("densemap", _cmd_densemap, "export dense-layer weight maps")
    p.add_argument("--net", required=True)
    p.add_argument("out_prefix")

    p = add("score", _cmd_score, "correlation score of two traces")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)

    p = add("map", _cmd_map, "per-pixel correlation map of a prediction video")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("output")

    p = add("report", _cmd_report, "compare methods over regions of interest")
    p.add_argument("--fluorescence", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--methods", default="bandpass,matched,cnn1d,cnn3d")
    p.add_argument("--bandpass", default=None, help="bandpass prediction video")
    p.add_argument("--matched", default=None, help="matched-filter prediction video")
    p.add_argument("--cnn1d", default=None, help="1D network prediction video")
    p.add_argument("--cnn3d-strong", default=None, help="3D trace for the strong region")
    p.add_argument("--cnn3d-weak", default=None)
    p.add_argument("--cnn3d-silent", default=None)
    p.add_argument("--eval-range", type=_parse_range, default=None)
    p.add_argument("--null-trials", type=int, default=50)
    p.add_argument("--null-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    add("selftest", _cmd_selftest, "run the built-in oracle checks")

    return parser, parsers


def _coerce(action: argparse.Action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if action.type is not None:
        return action.type(raw)
    return raw


def _apply_config(subparser: argparse.ArgumentParser, path: str) -> None:
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    defaults = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
        defaults[dest] = _coerce(actions[dest], raw)
    subparser.set_defaults(**defaults)


def dispatch(argv) -> int:
    """Parse argv, pin threads, run the chosen subcommand; returns exit status."""
    parser, parsers = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.config:
        try:
            _apply_config(parsers[args.command], args.config)
        except (OSError, ValueError) as exc:
            print(f"micromotion {args.command}: {exc}", file=sys.stderr)
            return 2
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
    if args.threads > 0:
        _pin_threads(args.threads)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"micromotion {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
