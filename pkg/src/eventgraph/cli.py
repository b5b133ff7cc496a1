"""``eventgraph`` command line.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 verification failure.
Config keys may be overridden with dotted flags, e.g. ``--optim.epochs 10``
or ``--model.pooling.sizes 896,768,640``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import config as C
from .datasets import make_split, read_manifest, write_manifest
from .events import EventStream, synth_generate
from .graph import EventGraph, build_graph, build_point_graph, read_graph, write_graph
from .io import EventFormatError, read_csv, read_nmnist_bin, write_csv, write_nmnist_bin
from .model import count_complexity
from .nn import load_checkpoint, save_checkpoint
from .train import evaluate, train

log = logging.getLogger("eventgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _split_overrides(extra: Sequence[str]) -> dict[str, str]:
    """Pair up leftover ``--section.key value`` (or ``--section.key=value``) flags."""
    out, i = {}, 0
    while i < len(extra):
        flag = extra[i]
        if not flag.startswith("--") or "." not in flag:
            raise UsageError(f"unrecognized argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {flag}")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def _config(args, overrides: dict[str, str], extra: dict[str, object] | None = None) -> C.RunConfig:
    merged = {**(extra or {}), **overrides}
    return C.load(args.config, args.preset or (), merged)


def _echo(cfg: C.RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.yaml"), "w") as f:
        f.write(cfg.to_yaml())


def _read_events(path: str, width: int, height: int, allow_unsorted: bool = False) -> EventStream:
    try:
        with open(path, "rb") as f:
            if path.endswith(".bin"):
                return read_nmnist_bin(f)
            return read_csv(f, width, height, allow_unsorted)
    except EventFormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None


def _load_manifest(path: str) -> list[tuple[str, int]]:
    try:
        return read_manifest(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _graphs_from_manifest(path: str, cfg: C.RunConfig, n_points: int | None = None) -> list[EventGraph]:
    """Graph files are read as is; event files are converted with the config's voxel settings."""
    params = cfg.voxel if n_points is None else C.dataclasses.replace(cfg.voxel, n_points=n_points)
    graphs = []
    for i, (file, label) in enumerate(_load_manifest(path)):
        if file.endswith(".evgr"):
            try:
                graphs.append(read_graph(file).with_label(label))
            except (OSError, ValueError) as exc:
                raise DataError(f"{file}: {exc}") from None
            continue
        stream = _read_events(file, cfg.scene.width, cfg.scene.height)
        if len(stream) == 0:
            raise DataError(f"{file}: empty event stream")
        if cfg.model.graph_mode == "point":
            graphs.append(build_point_graph(stream, params, cfg.optim.seed + i, label))
        else:
            graphs.append(build_graph(stream, params, label))
    return graphs


# subcommands


def cmd_synth_gen(args, overrides):
    if args.scene_file:
        import yaml

        with open(args.scene_file) as f:
            spec = C.scene_from_dict(yaml.safe_load(f) or {})
        stream = synth_generate(spec, args.seed)
        write_csv(stream, args.out)
        print(f"{len(stream)} events -> {args.out}")
        return EXIT_OK
    cfg = _config(args, overrides)
    _echo(cfg, args.out)
    for split in args.split:
        folder = os.path.join(args.out, split)
        os.makedirs(folder, exist_ok=True)
        samples = make_split(cfg.scene, split)
        rows = []
        for i, s in enumerate(samples):
            name = f"{i:05d}.csv"
            write_csv(s.stream, os.path.join(folder, name))
            rows.append((name, s.label))
        write_manifest(rows, os.path.join(folder, "labels.csv"))
        print(f"{split}: {len(samples)} streams -> {folder}")
    return EXIT_OK


def cmd_convert(args, overrides):
    src_bin = args.input.endswith(".bin")
    dst_bin = args.output.endswith(".bin")
    stream = _read_events(args.input, args.width, args.height, args.allow_unsorted)
    if dst_bin and (stream.width, stream.height) != (34, 34):
        if len(stream) and (stream.x.max() >= 34 or stream.y.max() >= 34):
            raise DataError("nmnist_bin holds a 34x34 sensor; coordinates exceed it")
        stream = EventStream(stream.x, stream.y, stream.t, stream.p, 34, 34)
    if dst_bin and len(stream) and stream.t.max() >= 2**23:
        raise DataError("timestamps do not fit the 23-bit nmnist_bin field")
    (write_nmnist_bin if dst_bin else write_csv)(stream, args.output)
    print(f"{len(stream)} events: {'nmnist_bin' if src_bin else 'csv'} -> {'nmnist_bin' if dst_bin else 'csv'}")
    return EXIT_OK


def cmd_build_graph(args, overrides):
    extra = {"model.graph_mode": args.graph_mode} if args.graph_mode else {}
    cfg = _config(args, overrides, extra)
    _echo(cfg, args.out)
    rows = []
    for i, (file, label) in enumerate(_load_manifest(args.manifest)):
        stream = _read_events(file, cfg.scene.width, cfg.scene.height)
        if len(stream) == 0:
            raise DataError(f"{file}: empty event stream")
        if cfg.model.graph_mode == "point":
            graph = build_point_graph(stream, cfg.voxel, cfg.optim.seed + i, label)
        else:
            graph = build_graph(stream, cfg.voxel, label)
        name = f"{i:05d}.evgr"
        write_graph(graph, os.path.join(args.out, name))
        rows.append((name, label))
    write_manifest(rows, os.path.join(args.out, "labels.csv"))
    print(f"{len(rows)} graphs ({cfg.model.graph_mode}) -> {args.out}")
    return EXIT_OK


def cmd_train(args, overrides):
    extra = {}
    if args.mfrl_mode:
        extra["model.mfrl_mode"] = args.mfrl_mode
    if args.graph_mode:
        extra["model.graph_mode"] = args.graph_mode
    cfg = _config(args, overrides, extra)
    train_set = _graphs_from_manifest(args.train, cfg)
    eval_set = _graphs_from_manifest(args.eval, cfg) if args.eval else None
    _echo(cfg, args.out)

    def report(epoch, result):
        print(f"epoch {epoch:3d} lr {result.lr[-1]:.3g} loss {result.train_loss[-1]:.4f} acc {result.eval_accuracy[-1]:.4f}", flush=True)

    try:
        result, best, model = train(cfg.model, train_set, cfg.optim, eval_set, report)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    save_checkpoint(best, os.path.join(args.out, "best.evck"))
    save_checkpoint(model.state_dict(), os.path.join(args.out, "last.evck"))
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        f.write(result.to_json())
    with open(os.path.join(args.out, "metrics.csv"), "w") as f:
        f.write(result.to_csv())
    print(f"final accuracy {result.final_accuracy:.4f} (best {result.best_accuracy:.4f} at epoch {result.best_epoch}) in {result.seconds:.1f}s")
    return EXIT_OK


def _load_state(path: str):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _evaluate(cfg, state, graphs):
    try:
        return evaluate(cfg.model, state, graphs)
    except (KeyError, ValueError) as exc:
        raise DataError(f"incompatible checkpoint: {exc}") from None


def cmd_eval(args, overrides):
    cfg = _config(args, overrides)
    state = _load_state(args.checkpoint)
    acc, confusion = _evaluate(cfg, state, _graphs_from_manifest(args.manifest, cfg))
    print(f"accuracy {acc:.4f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"accuracy": acc, "confusion": confusion.tolist()}, f, indent=2)
    return EXIT_OK


def cmd_gradcheck(args, overrides):
    from .verify import CASES, TOLERANCE, run_case

    names = args.case or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown case(s): {', '.join(unknown)}")
    failed = False
    for name in names:
        r = run_case(name, args.trials, args.seed)
        status = "ok" if r.passed(TOLERANCE) else "FAIL"
        failed |= status == "FAIL"
        print(f"{status:4s} {name:22s} max rel err {r.max_error:.2e} ({r.worst_input}) {r.trials} trials {r.seconds:.1f}s")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_count(args, overrides):
    cfg = _config(args, overrides)
    rep = count_complexity(cfg.model, args.vertices)
    n = args.vertices or cfg.voxel.n_points
    print(f"parameters {rep.parameters} ({rep.parameters / 1e6:.3f}M)")
    print(f"MACs {rep.macs} at {n} vertices")
    print(f"GFLOPs {rep.gflops:.4f}")
    return EXIT_OK


def cmd_bench_density(args, overrides):
    cfg = _config(args, overrides)
    state = _load_state(args.checkpoint)
    densities = [int(d) for d in str(args.densities).split(",") if d.strip()]
    if not densities:
        raise UsageError("no densities given")
    rows = []
    for n_p in densities:
        acc, _ = _evaluate(cfg, state, _graphs_from_manifest(args.manifest, cfg, n_points=n_p))
        rows.append((n_p, acc))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["n_points", "accuracy"])
    for n_p, acc in rows:
        writer.writerow([n_p, repr(acc)])
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["n_points", "accuracy"])
            w.writerows([n_p, repr(acc)] for n_p, acc in rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eventgraph", description="Event-stream voxel graphs and graph network training.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--preset", action="append", choices=sorted(C.PRESETS), help="apply a named preset (repeatable)")
        return p

    p = with_config(sub.add_parser("synth-gen", help="synthesize labelled moving-shape event streams"))
    p.add_argument("--out", required=True, help="output folder (or CSV file with --scene-file)")
    p.add_argument("--split", nargs="+", default=["train", "test"], choices=["train", "test"])
    p.add_argument("--scene-file", help="YAML scene; writes a single stream")
    p.add_argument("--seed", type=int, default=0, help="jitter seed for --scene-file")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("convert", help="convert between csv and nmnist_bin (by extension)")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--width", type=int, default=34)
    p.add_argument("--height", type=int, default=34)
    p.add_argument("--allow-unsorted", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = with_config(sub.add_parser("build-graph", help="turn an event manifest into EVGR graph files"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--graph-mode", choices=["voxel", "point"])
    p.set_defaults(func=cmd_build_graph)

    p = with_config(sub.add_parser("train", help="train from a graph or event manifest"))
    p.add_argument("--train", required=True, help="labels manifest of the training split")
    p.add_argument("--eval", help="labels manifest evaluated after every epoch")
    p.add_argument("--out", required=True)
    p.add_argument("--mfrl-mode", choices=["mfrl", "sfrl"])
    p.add_argument("--graph-mode", choices=["voxel", "point"])
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("eval", help="accuracy and confusion of a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write accuracy and confusion as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--case", action="append", help="run only this case (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("count", help="parameter and FLOP count for a config"))
    p.add_argument("--vertices", type=int, help="vertex count (defaults to voxel.n_points)")
    p.set_defaults(func=cmd_count)

    p = with_config(sub.add_parser("bench-density", help="accuracy of one checkpoint across vertex budgets"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="event manifest (graphs are rebuilt per density)")
    p.add_argument("--densities", default="384,512,640,768")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench_density)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        overrides = _split_overrides(extra)
        if overrides and not hasattr(args, "config"):
            raise UsageError(f"{args.command} takes no config overrides")
        return args.func(args, overrides)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc.filename}: not found", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
