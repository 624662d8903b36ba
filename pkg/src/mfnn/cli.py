"""Command-line entry point: ``mfnn <command> [flags]``."""

import argparse
import logging
import platform
import queue
import sys
import threading
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import decompose_signal, dump_branches, occlude
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .model import ModelConfig, count_complexity, sweep_input_length
from .numerics import set_precision
from .signals import SignalDataset, balance_and_split, make_dataset
from .training import TrainConfig, evaluate, summarize_runs, train_runs

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("mfnn")


class StreamInputError(Exception):
    pass


def write_manifest(path, args, artifacts, started, extra=None):
    if path is None:
        return
    snapshot = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    lines = [
        f"command={args.command}",
        "argv=" + " ".join(sys.argv[1:]),
        f"tool_version={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"seconds={time.perf_counter() - started:.3f}",
    ]
    lines += [f"config.{k}={v}" for k, v in snapshot.items()]
    lines += [f"artifact={a}" for a in artifacts]
    lines += [f"{k}={v}" for k, v in (extra or {}).items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _manifest_path(args, primary):
    if args.manifest:
        return args.manifest
    return f"{primary}.run.txt" if primary else None


def _model_config_from_args(args, **overrides):
    fields = dict(
        num_branches=args.branches, branch_filters=args.branch_filters, kernel=args.kernel,
        pool=args.pool, trunk_filters=args.trunk_filters, fc_width=args.fc_width,
        variant=args.variant, seed=args.seed,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def cmd_gen_data(args):
    started = time.perf_counter()
    ds = make_dataset(
        num_classes=args.classes, records_per_class=args.records_per_class, duration_s=args.duration_s,
        sample_rate=args.sample_rate, window=args.window, step=args.step, decimate=args.decimate,
        snr_db=args.snr_db, seed=args.seed, with_voltage=args.voltage, prefilter=args.prefilter,
    )
    ds.save(args.out)
    artifacts = [args.out]
    if args.csv:
        ds.to_csv(args.csv)
        artifacts.append(args.csv)
    counts = ds.counts()
    print(f"wrote {args.out}: {len(ds)} windows x {ds.channels} x {ds.window_len}, "
          f"{len(ds.class_names)} classes, {counts.min()} per class")
    write_manifest(_manifest_path(args, args.out), args, artifacts, started,
                   {"n_windows": len(ds), "window_len": ds.window_len})
    return EXIT_OK


def _splits(args):
    ds = SignalDataset.load(args.data)
    return ds, balance_and_split(ds, seed=args.split_seed)


def cmd_train(args):
    started = time.perf_counter()
    set_precision(args.precision)
    ds, splits = _splits(args)
    mcfg = _model_config_from_args(args, input_length=ds.window_len, in_channels=ds.channels,
                                   num_classes=len(ds.class_names))
    tcfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr0=args.lr,
                       decay_factor=args.decay_factor, decay_every=args.decay_every,
                       seed=args.seed, num_runs=args.runs)

    def progress(rec):
        log.info("epoch %d lr=%.3g loss=%.5f val_acc=%.4f (%.2fs)", rec.epoch, rec.lr, rec.train_loss,
                 rec.val_acc, rec.seconds)

    models, reports = train_runs(mcfg, splits, tcfg, log=progress)
    pick = max(range(len(reports)), key=lambda i: (reports[i].best_val_acc, -i))
    save_checkpoint(models[pick], args.out)
    artifacts = [args.out, f"{args.out}.manifest"]
    report_path = args.report or f"{args.out}.report.txt"
    with open(report_path, "w", encoding="utf-8") as fh:
        for k, v in summarize_runs(reports).items():
            fh.write(f"{k}={v}\n")
        fh.write(f"checkpoint_run={pick}\n")
        for i, r in enumerate(reports):
            fh.write(f"\n[run {i}]\n")
            fh.write(r.to_text())
    artifacts.append(report_path)
    for i, r in enumerate(reports):
        curves = f"{args.out}.run{i}.curves.csv"
        with open(curves, "w", encoding="utf-8") as fh:
            fh.write(r.curves_csv())
        artifacts.append(curves)
    summary = summarize_runs(reports)
    print(f"variant={mcfg.variant} runs={summary['runs']} mean_test_acc={summary['mean_test_acc']:.4f} "
          f"std={summary['std_test_acc']:.4f} params={models[pick].num_params()}")
    write_manifest(_manifest_path(args, args.out), args, artifacts, started, summary)
    return EXIT_OK


def cmd_eval(args):
    started = time.perf_counter()
    set_precision(args.precision)
    model = load_checkpoint(args.checkpoint)
    ds = SignalDataset.load(args.data)
    if args.split != "all":
        ds = dict(zip(("train", "val", "test"), balance_and_split(ds, seed=args.split_seed)))[args.split]
    acc, conf = evaluate(model, ds.windows, ds.labels)
    print(f"accuracy={acc:.6f} n={len(ds)}")
    print("true\\pred," + ",".join(ds.class_names))
    for name, row in zip(ds.class_names, conf):
        print(name + "," + ",".join(str(int(v)) for v in row))
    write_manifest(args.manifest, args, [], started, {"accuracy": acc})
    return EXIT_OK


def cmd_count(args):
    started = time.perf_counter()
    cfg = _model_config_from_args(args, input_length=args.length, num_classes=args.classes,
                                  in_channels=args.in_channels)
    if args.target_params:
        L = sweep_input_length(cfg, args.target_params, range(args.sweep_min, args.sweep_max + 1))
        cfg = replace(cfg, input_length=L)
    c = count_complexity(cfg)
    label = {"mfnn": "MFNN", "relu_m": "ReLU-M", "one_trunk": "1-Trunk"}[cfg.variant]
    print("Models & #PRM & FLOPs & #MAC")
    print(c.row(label))
    print(f"input_length={c.input_length} params={c.params} flops={c.flops} peak_mac_bytes={c.peak_mac_bytes}")
    write_manifest(args.manifest, args, [], started, c._asdict())
    return EXIT_OK


def _pick_window(args):
    ds = SignalDataset.load(args.data)
    if not 0 <= args.index < len(ds):
        raise ConfigError(f"--index {args.index} outside dataset of {len(ds)} windows")
    return ds, ds.windows[args.index], int(ds.labels[args.index])


def _dt(args, ds):
    if args.dt:
        return args.dt
    return float(ds.meta.get("sampling_time_s", 1.0)) if ds is not None else 1.0


def cmd_occlude(args):
    started = time.perf_counter()
    set_precision(args.precision)
    model = load_checkpoint(args.checkpoint)
    _, window, label = _pick_window(args)
    om = occlude(model, window, label, args.size, args.stride)
    om.to_csv(args.out)
    print(f"wrote {args.out}: {len(om.window_starts)} positions, baseline_prob={om.baseline_prob:.6f}")
    write_manifest(_manifest_path(args, args.out), args, [args.out], started)
    return EXIT_OK


def cmd_decompose(args):
    started = time.perf_counter()
    ds = None
    if args.signal:
        x = np.loadtxt(args.signal, ndmin=1)
    elif args.data:
        ds, window, _ = _pick_window(args)
        x = window[args.channel]
    else:
        raise ConfigError("decompose needs --signal or --data")
    dec = decompose_signal(x, _dt(args, ds), args.top_k)
    dec.to_csv(args.out)
    for c in dec.components:
        print(f"{c.rank},{c.freq_hz:.6g},{c.amplitude:.6g},{c.phase_rad:.6g}")
    write_manifest(_manifest_path(args, args.out), args, [args.out], started)
    return EXIT_OK


def cmd_dump_branches(args):
    started = time.perf_counter()
    set_precision(args.precision)
    model = load_checkpoint(args.checkpoint)
    ds, window, _ = _pick_window(args)
    dump = dump_branches(model, window, _dt(args, ds))
    dump.to_csv(args.out)
    summary = args.summary or f"{args.out}.summary.csv"
    dump.summary_csv(summary)
    print(f"wrote {args.out} ({sum(len(t) for t in dump.traces)} channel traces) and {summary}")
    write_manifest(_manifest_path(args, args.out), args, [args.out, summary], started)
    return EXIT_OK


def _read_windows(lines, window, step, strict, out_q):
    buf = []
    try:
        for lineno, line in enumerate(lines, 1):
            text = line.strip()
            if not text:
                continue
            try:
                value = float(text)
                if not np.isfinite(value):
                    raise ValueError(text)
            except ValueError:
                if strict:
                    raise StreamInputError(f"line {lineno}: malformed sample {text!r}")
                print(f"warning: line {lineno}: skipping malformed sample {text!r}", file=sys.stderr)
                continue
            buf.append(value)
            if len(buf) == window:
                out_q.put(np.array(buf))
                del buf[:step]
    except StreamInputError as e:
        out_q.put(e)
    finally:
        out_q.put(None)


def cmd_stream(args):
    started = time.perf_counter()
    set_precision("float32")
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    if cfg.in_channels != 1:
        raise ConfigError("stream mode supports single-channel models only")
    window = args.window or cfg.input_length * args.decimate
    step = args.step or window // 2
    if window % args.decimate or window // args.decimate != cfg.input_length:
        raise ConfigError(f"--window {window} with --decimate {args.decimate} does not give the "
                          f"model's input length {cfg.input_length}")
    names = args.class_names.split(",") if args.class_names else [str(k) for k in range(cfg.num_classes)]
    if len(names) != cfg.num_classes:
        raise ConfigError(f"--class-names lists {len(names)} names, model has {cfg.num_classes} classes")
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    out = sys.stdout
    hand_off = queue.Queue(maxsize=args.queue_size)
    reader = threading.Thread(target=_read_windows, args=(src, window, step, args.strict, hand_off), daemon=True)
    reader.start()
    latencies = []
    failure = None
    try:
        out.write("window_index,predicted_class,probability,latency_us\n")
        while True:
            item = hand_off.get()
            if item is None:
                break
            if isinstance(item, StreamInputError):
                failure = item
                continue
            x = item[::args.decimate].reshape(1, 1, -1)
            t0 = time.perf_counter_ns()
            logits, _ = model.forward(x)
            latency = (time.perf_counter_ns() - t0) / 1000
            z = logits[0] - logits[0].max()
            p = np.exp(z) / np.exp(z).sum()
            k = int(np.argmax(p))
            out.write(f"{len(latencies)},{names[k]},{float(p[k]):.6f},{latency:.1f}\n")
            latencies.append(latency)
    finally:
        # keep draining so a reader blocked on a full queue can finish
        while reader.is_alive():
            try:
                hand_off.get(timeout=0.05)
            except queue.Empty:
                pass
        reader.join()
        if src is not sys.stdin:
            src.close()
    if latencies:
        lat = np.array(latencies)
        mean_ms = lat.mean() / 1000
        out.write(f"# windows={len(lat)} mean_ms={mean_ms:.4f} p95_ms={np.percentile(lat, 95) / 1000:.4f} "
                  f"max_ms={lat.max() / 1000:.4f} budget_ms={args.latency_budget_ms} "
                  f"within_budget={'yes' if mean_ms <= args.latency_budget_ms else 'no'}\n")
    else:
        out.write("# windows=0\n")
    out.flush()
    write_manifest(args.manifest, args, [], started, {"windows": len(latencies)})
    if failure is not None:
        raise failure
    return EXIT_OK


def _add_model_flags(p):
    p.add_argument("--variant", default="mfnn", help="mfnn | one-trunk | relu-m")
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--branch-filters", type=int, default=6)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--pool", type=int, default=2)
    p.add_argument("--trunk-filters", type=int, default=8)
    p.add_argument("--fc-width", type=int, default=256)


def build_parser():
    parser = argparse.ArgumentParser(prog="mfnn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mfnn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--manifest", help="run manifest path (default: next to the main output)")
        return p

    p = command("gen-data", cmd_gen_data, "generate a synthetic ARCD dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--records-per-class", type=int, default=10)
    p.add_argument("--duration-s", type=float, default=1.0)
    p.add_argument("--sample-rate", type=float, default=200_000)
    p.add_argument("--window", type=int, default=10_000)
    p.add_argument("--step", type=int, default=5_000)
    p.add_argument("--decimate", type=int, default=10)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--voltage", action="store_true", help="add the supply voltage as a second channel")
    p.add_argument("--prefilter", action="store_true", help="block-average before decimation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also export one-window-per-row CSV")
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train one or more seeds and save the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--decay-factor", type=float, default=0.5)
    p.add_argument("--decay-every", type=int, default=30)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--precision", default="float32", choices=["float32", "float64"])
    p.add_argument("--report")

    p = command("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--precision", default="float32", choices=["float32", "float64"])

    p = command("count", cmd_count, "parameter / FLOP / peak-memory table row")
    _add_model_flags(p)
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--in-channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-params", type=int, help="sweep input length toward this parameter count")
    p.add_argument("--sweep-min", type=int, default=16)
    p.add_argument("--sweep-max", type=int, default=20_000)

    for name, func, text in (("occlude", cmd_occlude, "occlusion sensitivity map"),
                             ("dump-branches", cmd_dump_branches, "per-branch output traces")):
        p = command(name, func, text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--index", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--precision", default="float64", choices=["float32", "float64"])
        if name == "occlude":
            p.add_argument("--size", type=int, default=200)
            p.add_argument("--stride", type=int, default=100)
        else:
            p.add_argument("--dt", type=float, help="input sampling interval (default: dataset metadata)")
            p.add_argument("--summary")

    p = command("decompose", cmd_decompose, "top-k DFS components of a signal")
    p.add_argument("--signal", help="text file, one sample per line")
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--dt", type=float)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", required=True)

    p = command("stream", cmd_stream, "classify a sample stream window by window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="sample file, one decimal per line ('-' = stdin)")
    p.add_argument("--window", type=int, help="samples per window before decimation")
    p.add_argument("--step", type=int)
    p.add_argument("--decimate", type=int, default=1)
    p.add_argument("--class-names", help="comma-separated class names")
    p.add_argument("--strict", action="store_true", help="abort on malformed samples")
    p.add_argument("--latency-budget-ms", type=float, default=10.0)
    p.add_argument("--queue-size", type=int, default=8)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as e:
        print(f"mfnn {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, StreamInputError, OSError) as e:
        print(f"mfnn {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"mfnn {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
