"""Command line entry point: ``rotorfp {detect,spectrum,synth,eval,tune}``.

Exit status is 0 on success, 2 for usage errors, 3 for unreadable or
malformed input and 4 when an internal contract is violated.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from rotorfp.errors import ContractViolation, FormatError, ValidationError
from rotorfp.events import (DEFAULT_WINDOW_US, SensorGeometry, guess_format, read_boxes_jsonl,
                            read_events, write_boxes_jsonl, write_events)
from rotorfp.fingerprint import DetectorParams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CONTRACT = 4

log = logging.getLogger("rotorfp")


class UsageError(Exception):
    pass


def _params(args) -> DetectorParams:
    params = DetectorParams.load(args.config) if args.config else DetectorParams()
    return params.with_overrides(args.set or [])


def _geometry(args):
    return SensorGeometry.parse(args.geometry) if args.geometry else None


def _load_events(args):
    try:
        fmt = args.format or guess_format(args.input)
    except ContractViolation:
        raise UsageError(f"cannot tell the format of {args.input}; pass --format") from None
    geometry = _geometry(args)
    if fmt == "csv" and geometry is None:
        raise UsageError("CSV input needs --geometry WIDTHxHEIGHT")
    return read_events(args.input, fmt, geometry, args.slack_us)


def _pixel(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


# ---------------------------------------------------------------- subcommands

def cmd_detect(args) -> int:
    from rotorfp.pipeline import detect_stream, iter_windows, render_frame, write_ppm

    params = _params(args)
    geometry, events = _load_events(args)
    windows = list(iter_windows(events, args.window_us))
    detections, stats = detect_stream(windows, geometry, params, args.window_us)
    with open(args.out, "w") as fh:
        for d in detections:
            fh.write(json.dumps({"window": d.window_index,
                                 "boxes": [b.to_dict() for b in d.boxes],
                                 "latency_ms": d.latency_ms}) + "\n")
    if args.frames:
        os.makedirs(args.frames, exist_ok=True)
        for w, d in zip(windows, detections):
            write_ppm(Path(args.frames) / f"frame_{w.index:06d}.ppm", render_frame(w, d, geometry))
    summary = {"windows": len(detections),
               "detections": sum(len(d.boxes) for d in detections),
               "latency": stats.to_dict() if stats else None}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    from rotorfp.events import normalize_timestamps
    from rotorfp.pipeline import iter_windows
    from rotorfp.spectral import bin_hz_for, ndft, power_spectrum

    params = _params(args)
    _, events = _load_events(args)
    x, y = args.pixel
    window = next((w for w in iter_windows(events, args.window_us) if w.index == args.window), None)
    if window is None:
        raise ValidationError(f"stream has no window {args.window}")
    ev = window.events
    sel = ev[(ev["x"] == x) & (ev["y"] == y)]
    if sel.size == 0:
        raise ValidationError(f"no events at pixel ({x},{y}) in window {args.window}")
    phases = normalize_timestamps(sel["t"], window.t_start, window.t_len)
    spec = power_spectrum(ndft(sel["p"], phases, params.K), bin_hz_for(window.t_len))
    out = sys.stdout
    out.write("k,hz,power\n")
    for k, (hz, p) in enumerate(zip(spec.freqs().tolist(), spec.P.tolist())):
        out.write(f"{k},{hz!r},{p!r}\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    from rotorfp.synth import SceneSpec, gen_scene

    spec = SceneSpec.load(args.spec)
    geometry, events, truth = gen_scene(spec)
    write_events(args.out, events, geometry, args.format)
    write_boxes_jsonl(args.gt, truth)
    print(json.dumps({"events": int(events.shape[0]), "windows": len(truth)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from rotorfp.evaluation import score_frames

    preds = read_boxes_jsonl(args.pred)
    gts = read_boxes_jsonl(args.gt)
    print(json.dumps(score_frames(preds, gts, args.iou).to_dict()))
    return EXIT_OK


def _load_dataset(data_dir, t_len):
    from rotorfp.tuner import LabeledRecording

    root = Path(data_dir)
    if not root.is_dir():
        raise UsageError(f"{data_dir} is not a directory")
    dataset = []
    for evb in sorted(root.glob("*.evb")):
        gt = evb.with_suffix(".jsonl")
        if not gt.exists():
            raise ValidationError(f"{evb.name} has no matching {gt.name}")
        geometry, events = read_events(evb, "evb")
        dataset.append(LabeledRecording(events, geometry, read_boxes_jsonl(gt), t_len))
    if not dataset:
        raise ValidationError(f"no .evb/.jsonl pairs in {data_dir}")
    return dataset


def cmd_tune(args) -> int:
    from rotorfp.tuner import SearchSpace, run_bo

    base = _params(args)
    space = SearchSpace.load(args.space, base) if args.space else SearchSpace(base=base)
    dataset = _load_dataset(args.data, args.window_us)

    def report(i, params, value):
        log.info("trial %d f1=%.4f", i, value)

    best, history = run_bo(space, args.random, args.iters, dataset, args.seed, callback=report)
    Path(args.out).write_text(best.to_json() + "\n")
    hist_path = args.history or str(Path(args.out).with_suffix(".history.csv"))
    Path(hist_path).write_text(history.to_csv(space))
    print(json.dumps({"best_f1": max(history.values), "trials": len(history)}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotorfp",
                                     description="Rotor detection from event-camera streams.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_input(p):
        p.add_argument("--input", required=True)
        p.add_argument("--format", choices=("csv", "evb"))
        p.add_argument("--geometry", help="WIDTHxHEIGHT, required for CSV input")
        p.add_argument("--slack-us", type=int, default=0,
                       help="tolerated backwards timestamp jump")

    def add_params(p):
        p.add_argument("--config", help="detector parameters as JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one parameter; repeatable")
        p.add_argument("--window-us", type=int, default=DEFAULT_WINDOW_US)

    p = sub.add_parser("detect", help="detect rotors window by window")
    add_input(p)
    add_params(p)
    p.add_argument("--out", required=True, help="detections as JSON lines")
    p.add_argument("--frames", help="directory for PPM overlay frames")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("spectrum", help="power spectrum of one pixel in one window")
    add_input(p)
    add_params(p)
    p.add_argument("--pixel", type=_pixel, required=True, metavar="X,Y")
    p.add_argument("--window", type=int, required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--format", choices=("csv", "evb"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="Bayesian optimisation of detector parameters")
    p.add_argument("--data", required=True, help="directory of NAME.evb / NAME.jsonl pairs")
    p.add_argument("--space", help="search bounds as JSON {name: [lo, hi]}")
    p.add_argument("--config", help="base parameters for untuned fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--random", type=int, default=50)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window-us", type=int, default=DEFAULT_WINDOW_US)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="CSV trial log (default: next to --out)")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rotorfp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"rotorfp: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ContractViolation as exc:
        print(f"rotorfp: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
