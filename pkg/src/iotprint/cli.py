"""Command-line orchestration of the fingerprinting pipeline.

Subcommands:
  make-fixtures  synthetic pcap corpus for desk-scale runs
  preprocess     pcap dir + MAC map -> per-device IDX corpus
  experiment     corpus -> labeled split -> trained model -> reports
  predict        classify sessions from a pcap or raw .bin payloads
  kfold          k-fold cross-validation for schemes 1-4

Exit codes: 0 success, 1 I/O or data-format error, 2 usage error.
The seed comes from --seed, else the IOTPRINT_SEED environment variable,
else 0.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .capture import group_by_mac, read_pcap, split_sessions
from .dataset import (
    CORPUS_MANIFEST,
    SCHEME_NAMES,
    SCHEME_ONE_VS_ALL,
    SCHEME_ONE_VS_REST_IOT,
    SCHEME_UNKNOWN,
    DeviceCorpus,
    ExperimentSpec,
    SplitPools,
    filter_min_sessions,
    kfold_split,
    label_for_experiment,
    load_corpus,
    parse_scheme,
    save_corpus,
    save_split,
    split,
    split_sizes,
)
from .errors import (
    EmptyCorpus,
    IotprintError,
    UnknownDevice,
    USAGE_ERRORS,
)
from .evaluation import (
    UNKNOWN_NAME,
    calibrate_threshold,
    classify_with_threshold,
    evaluate,
    format_report,
    unknown_detection_report,
    unknown_recall,
    write_confusion_csv,
    write_metrics_csv,
)
from .fixtures import default_devices, load_device_spec, slugify, write_fixture_corpus
from .manifest import write_manifest
from .nn import TrainConfig, load_model, predict, save_model, train_best_epoch, train
from .transform import (
    dedupe_and_filter,
    dump_payloads,
    extract_payload,
    fix_length,
    stack_payload_vectors,
)

DEFAULT_EPOCHS = 25
DEFAULT_MIN_SESSIONS = 1000


class _UsageError(Exception):
    """Bad invocation detected after argparse (exit code 2)."""


def resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("IOTPRINT_SEED")
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError:
            raise _UsageError(
                f"IOTPRINT_SEED must be an integer, got {env!r}") from None
    return 0


def read_mac_map(path) -> dict[str, tuple[str, str]]:
    """TSV lines "mac<TAB>device name<TAB>kind"; kind is iot or non-iot."""
    mapping: dict[str, tuple[str, str]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise UnknownDevice(f"{path}:{lineno}: expected "
                                f"'mac<TAB>name<TAB>kind', got {line!r}")
        mac, name, kind = (p.strip() for p in parts)
        kind = kind.lower()
        if kind not in ("iot", "non-iot"):
            raise UnknownDevice(f"{path}:{lineno}: kind must be iot or "
                                f"non-iot, got {kind!r}")
        mapping[mac.lower()] = (name, kind)
    if not mapping:
        raise UnknownDevice(f"{path}: no MAC mappings found")
    return mapping


def train_config_from_args(args, seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2,
                       epsilon=args.epsilon, seed=seed, hidden=args.hidden,
                       init_stdev=args.init_stdev)


def _config_entries(config: TrainConfig) -> dict[str, str]:
    return {"config.epochs": str(config.epochs),
            "config.batch_size": str(config.batch_size),
            "config.learning_rate": repr(config.learning_rate),
            "config.beta1": repr(config.beta1),
            "config.beta2": repr(config.beta2),
            "config.epsilon": repr(config.epsilon),
            "config.hidden": str(config.hidden),
            "config.init_stdev": repr(config.init_stdev)}


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(args) -> int:
    seed = resolve_seed(args.seed)
    mac_map = read_mac_map(args.mac_map)
    pcap_dir = Path(args.pcap_dir)
    pcap_files = sorted(pcap_dir.glob("*.pcap"))
    if not pcap_files:
        raise EmptyCorpus(f"no .pcap files in {pcap_dir}")

    skip_counts: Counter = Counter()
    sessions_by_mac: dict[str, list] = {}
    for pcap_path in pcap_files:
        packets, skips = read_pcap(pcap_path)
        skip_counts.update(skips)
        for mac, records in group_by_mac(split_sessions(packets)).items():
            sessions_by_mac.setdefault(mac.lower(), []).extend(records)

    # merge MAC buckets into named devices, keeping the map-file order
    payloads_by_device: dict[str, list[bytes]] = {}
    kinds: dict[str, str] = {}
    for mac, (name, kind) in mac_map.items():
        records = sessions_by_mac.pop(mac, [])
        payloads_by_device.setdefault(name, [])
        kinds[name] = kind
        payloads_by_device[name].extend(
            extract_payload(r, initiator_only=args.initiator_only) for r in records)
    unmapped = {mac: len(records) for mac, records in sessions_by_mac.items()}

    vectors: dict[str, np.ndarray] = {}
    for name, raw_payloads in payloads_by_device.items():
        kept = dedupe_and_filter(raw_payloads)
        vectors[name] = stack_payload_vectors([fix_length(p) for p in kept])
        if args.dump_bins and kept:
            dump_payloads(kept, Path(args.out_dir) / "bins" / slugify(name),
                          prefix=slugify(name))

    corpus = DeviceCorpus(vectors=vectors, kinds=kinds)
    dropped = [n for n in corpus.device_names
               if len(corpus.vectors[n]) <= args.min_sessions]
    corpus = filter_min_sessions(corpus, args.min_sessions)

    extra = {f"skip.{reason}": str(count) for reason, count in sorted(skip_counts.items())}
    extra["source.files"] = str(len(pcap_files))
    extra["min.sessions"] = str(args.min_sessions)
    extra["version"] = __version__
    for i, (mac, count) in enumerate(sorted(unmapped.items())):
        extra[f"unmapped.{i}"] = f"{mac}:{count}"
    manifest_path = save_corpus(corpus, args.out_dir, seed=seed, extra=extra)

    if args.figures:
        from . import plots
        fig_dir = Path(args.out_dir) / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        for name in corpus.device_names:
            plots.save_payload_grid(corpus.vectors[name][:64],
                                    fig_dir / f"{slugify(name)}-payloads.png",
                                    title=name)

    print(f"{'Device':<32}{'Type':<9}{'Total':>8}{'Validation':>12}"
          f"{'Test':>8}{'Train':>8}")
    total = 0
    for name in corpus.device_names:
        n = len(corpus.vectors[name])
        n_val, n_test, n_train = split_sizes(n)
        kind = "IoT" if corpus.kinds[name] == "iot" else "non-IoT"
        print(f"{name:<32}{kind:<9}{n:>8}{n_val:>12}{n_test:>8}{n_train:>8}")
        total += n
    print(f"{'Total':<32}{'':<9}{total:>8}")
    for name in dropped:
        print(f"note: dropped {name!r} (needs more than {args.min_sessions} sessions)")
    for mac, count in sorted(unmapped.items()):
        print(f"note: unmapped MAC {mac} with {count} sessions")
    if skip_counts:
        skipped = ", ".join(f"{k}={v}" for k, v in sorted(skip_counts.items()))
        print(f"note: skipped packets: {skipped}")
    print(f"corpus written to {manifest_path.parent} ({manifest_path.name})")
    return 0


# ---------------------------------------------------------------- experiment


def _experiment_targets(corpus: DeviceCorpus, scheme: int, args) -> list[str | None]:
    """Devices to iterate over: one entry per run (None = no target needed)."""
    if scheme in (SCHEME_ONE_VS_REST_IOT, SCHEME_ONE_VS_ALL):
        if args.rotate:
            return list(corpus.iot_devices)
        if not args.target:
            raise UnknownDevice(f"scheme {scheme} needs --target (or --rotate)")
        return [args.target]
    if scheme == SCHEME_UNKNOWN:
        if args.rotate:
            return list(corpus.iot_devices)
        if not args.exclude:
            raise UnknownDevice("scheme 5 needs --exclude (or --rotate)")
        return [args.exclude]
    return [None]


def run_experiment(corpus: DeviceCorpus, scheme: int, device: str | None,
                   run_dir: Path, config: TrainConfig, seed: int,
                   corpus_manifest: Path | None) -> dict:
    """One train/select/retrain/evaluate cycle; writes all run artifacts."""
    from . import plots

    if scheme == SCHEME_UNKNOWN:
        spec = ExperimentSpec(scheme=scheme, excluded=device)
    elif scheme in (SCHEME_ONE_VS_REST_IOT, SCHEME_ONE_VS_ALL):
        spec = ExperimentSpec(scheme=scheme, target=device)
    else:
        spec = ExperimentSpec(scheme=scheme)

    run_dir.mkdir(parents=True, exist_ok=True)
    pools = split(corpus, seed)
    ds = label_for_experiment(pools, spec)
    split_manifest = save_split(ds, run_dir / "data", parent=corpus_manifest)

    params, history, best_epoch, probe = train_best_epoch(ds, config)

    threshold = None
    if scheme == SCHEME_UNKNOWN:
        calibration = calibrate_threshold(params, ds.validation,
                                          ds.unknown_validation)
        threshold = calibration.threshold
        report = unknown_detection_report(params, threshold, ds.test,
                                          ds.unknown_test)
    else:
        report = evaluate(params, ds.test)

    meta = {"scheme": scheme, "scheme_name": SCHEME_NAMES[scheme],
            "seed": seed, "label_names": ds.label_names,
            "output_width": ds.output_width, "best_epoch": best_epoch,
            "epochs_probed": config.epochs,
            "hidden": config.hidden, "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "test_accuracy": report.accuracy}
    if spec.target:
        meta["target"] = spec.target
    if ds.unknown_device:
        meta["excluded"] = ds.unknown_device
        meta["threshold"] = threshold
        meta["calibration_accuracy"] = calibration.achieved_validation_accuracy
        meta["unknown_recall"] = unknown_recall(report)
    model_path = save_model(params, run_dir / "model.iotp", meta)

    report_path = run_dir / "report.txt"
    header = [f"scheme: {scheme} ({SCHEME_NAMES[scheme]})", f"seed: {seed}",
              f"best epoch: {best_epoch} (of {config.epochs} probed)"]
    if spec.target:
        header.insert(1, f"target: {spec.target}")
    if ds.unknown_device:
        header.insert(1, f"excluded: {ds.unknown_device}")
    report_path.write_text("\n".join(header) + "\n\n" + format_report(report),
                           encoding="utf-8")
    write_confusion_csv(report, run_dir / "confusion.csv")
    write_metrics_csv(report, run_dir / "metrics.csv")

    history_path = run_dir / "history.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "epoch", "val_accuracy", "val_loss", "train_loss"])
        for phase, hist in (("probe", probe), ("final", history)):
            for i in range(len(hist)):
                writer.writerow([phase, i + 1, f"{hist.val_accuracy[i]:.6f}",
                                 f"{hist.val_loss[i]:.6f}",
                                 f"{hist.train_loss[i]:.6f}"])

    curves_path = plots.save_training_curves(
        probe, run_dir / "training_curves.png",
        title=f"scheme {scheme}" + (f" ({device})" if device else ""),
        chosen_epoch=best_epoch)

    entries = {"stage": "experiment", "version": __version__,
               "scheme": str(scheme), "scheme.name": SCHEME_NAMES[scheme],
               "seed": str(seed), "best.epoch": str(best_epoch),
               "test.accuracy": f"{report.accuracy:.6f}"}
    entries.update(_config_entries(config))
    if spec.target:
        entries["target"] = spec.target
    if ds.unknown_device:
        entries["excluded"] = ds.unknown_device
        entries["threshold"] = f"{threshold:.2f}"
        entries["unknown.recall"] = f"{unknown_recall(report):.6f}"
    files = [model_path, Path(str(model_path) + ".json"), report_path,
             run_dir / "confusion.csv", run_dir / "metrics.csv",
             history_path, curves_path]
    write_manifest(run_dir / "run.manifest", entries, files, parent=split_manifest)

    result = {"device": device, "best_epoch": best_epoch,
              "accuracy": report.accuracy, "threshold": threshold,
              "unknown_recall": meta.get("unknown_recall")}
    return result


def cmd_experiment(args) -> int:
    seed = resolve_seed(args.seed)
    scheme = parse_scheme(args.scheme)
    corpus_dir = Path(args.corpus)
    corpus = load_corpus(corpus_dir, verify=not args.no_verify)
    corpus_manifest = corpus_dir / CORPUS_MANIFEST
    config = train_config_from_args(args, seed)
    out_dir = Path(args.out)

    targets = _experiment_targets(corpus, scheme, args)
    rotating = len(targets) > 1
    results = []
    for device in targets:
        run_dir = out_dir / slugify(device) if rotating else out_dir
        result = run_experiment(corpus, scheme, device, run_dir, config, seed,
                                corpus_manifest)
        results.append(result)
        label = f" [{device}]" if device else ""
        line = (f"scheme {scheme}{label}: best epoch {result['best_epoch']}, "
                f"test accuracy {result['accuracy']:.4f}")
        if result["threshold"] is not None:
            line += (f", threshold {result['threshold']:.2f}, "
                     f"unknown recall {result['unknown_recall']:.4f}")
        print(line)

    if rotating:
        summary_path = out_dir / "summary.csv"
        with open(summary_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if scheme == SCHEME_UNKNOWN:
                writer.writerow(["excluded_device", "best_epoch", "threshold",
                                 "test_accuracy", "unknown_recall"])
                for r in results:
                    writer.writerow([r["device"], r["best_epoch"],
                                     f"{r['threshold']:.2f}",
                                     f"{r['accuracy']:.6f}",
                                     f"{r['unknown_recall']:.6f}"])
            else:
                writer.writerow(["target_device", "best_epoch", "test_accuracy"])
                for r in results:
                    writer.writerow([r["device"], r["best_epoch"],
                                     f"{r['accuracy']:.6f}"])
        mean_acc = sum(r["accuracy"] for r in results) / len(results)
        print(f"mean test accuracy over {len(results)} runs: {mean_acc:.4f} "
              f"(summary: {summary_path})")
    return 0


# ------------------------------------------------------------------ predict


def _payloads_from_input(path: Path) -> list[tuple[str, bytes]]:
    """(identifier, payload) pairs from a pcap or raw .bin file/directory."""
    if path.is_dir():
        pairs = []
        for bin_path in sorted(path.glob("*.bin")):
            pairs.append((bin_path.name, bin_path.read_bytes()))
        return pairs
    if path.suffix == ".bin":
        return [(path.name, path.read_bytes())]
    packets, _ = read_pcap(path)
    return [(str(key), extract_payload(record))
            for key, record in split_sessions(packets).items()]


def cmd_predict(args) -> int:
    params, meta = load_model(args.model)
    label_names = meta.get("label_names") or \
        [f"class-{i}" for i in range(max(params.output_width, 2))]
    threshold = args.threshold if args.threshold is not None else meta.get("threshold")

    classified = 0
    for ident, payload in _payloads_from_input(Path(args.input)):
        if not payload:
            continue
        probs = predict(params, np.frombuffer(fix_length(payload), dtype=np.uint8))
        if params.output_width == 1:
            label = int(probs[0] >= 0.5)
            posterior = float(probs[0]) if label else 1.0 - float(probs[0])
            name = label_names[label]
        else:
            if threshold is not None:
                label = classify_with_threshold(probs, float(threshold))
            else:
                label = int(np.argmax(probs))
            posterior = float(probs.max())
            name = UNKNOWN_NAME if label < 0 else label_names[label]
        print(f"{ident}\t{name}\t{posterior:.4f}")
        classified += 1
    if not classified:
        print("no classifiable sessions")
    return 0


# ------------------------------------------------------------- make-fixtures


def cmd_make_fixtures(args) -> int:
    seed = resolve_seed(args.seed)
    if args.spec:
        devices = load_device_spec(args.spec)
    else:
        iot = args.iot if args.iot is not None else max(args.devices - 1, 1)
        devices = default_devices(args.devices, args.sessions, iot)
    map_path = write_fixture_corpus(args.out_dir, devices, seed)
    for device in devices:
        print(f"{device.name}\t{device.kind}\t{device.sessions} sessions")
    print(f"fixture corpus in {args.out_dir} (MAC map: {map_path})")
    return 0


# -------------------------------------------------------------------- kfold


def cmd_kfold(args) -> int:
    seed = resolve_seed(args.seed)
    scheme = parse_scheme(args.scheme)
    corpus = load_corpus(Path(args.corpus), verify=not args.no_verify)
    folds = kfold_split(corpus, args.k, seed, scheme=scheme)
    config = train_config_from_args(args, seed)

    if scheme in (SCHEME_ONE_VS_REST_IOT, SCHEME_ONE_VS_ALL) and not args.target:
        raise UnknownDevice(f"scheme {scheme} needs --target")
    spec = ExperimentSpec(scheme=scheme, target=args.target or None)

    rows = []
    for fold_index in range(args.k):
        train_pool: dict[str, np.ndarray] = {}
        for other in range(args.k):
            if other == fold_index:
                continue
            for name, arr in folds[other].items():
                if name in train_pool:
                    train_pool[name] = np.concatenate([train_pool[name], arr])
                else:
                    train_pool[name] = arr
        pools = SplitPools(train=train_pool, validation=folds[fold_index],
                           test=folds[fold_index], kinds=dict(corpus.kinds),
                           seed=seed)
        ds = label_for_experiment(pools, spec)
        params, _ = train(ds, config)  # fixed epochs; no per-fold selection
        report = evaluate(params, ds.test)
        wp, wr, wf = report.weighted_avg
        rows.append((fold_index + 1, report.accuracy, wp, wr, wf))
        print(f"fold {fold_index + 1}/{args.k}: accuracy {report.accuracy:.4f}")

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    accuracies = [r[1] for r in rows]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "accuracy", "weighted_precision",
                         "weighted_recall", "weighted_f1"])
        for fold, acc, wp, wr, wf in rows:
            writer.writerow([fold, f"{acc:.6f}", f"{wp:.6f}", f"{wr:.6f}",
                             f"{wf:.6f}"])
        writer.writerow(["mean", f"{np.mean(accuracies):.6f}", "", "", ""])
    print(f"mean accuracy {np.mean(accuracies):.4f} "
          f"(std {np.std(accuracies):.4f}); table: {out_path}")
    return 0


# -------------------------------------------------------------------- parser


def _add_train_flags(parser):
    parser.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS,
                        help="probe epochs before best-epoch retraining "
                             f"(default {DEFAULT_EPOCHS})")
    parser.add_argument("--batch-size", type=int, default=100,
                        help="mini-batch size (default 100)")
    parser.add_argument("--hidden", type=int, default=784,
                        help="hidden-layer width (default 784)")
    parser.add_argument("--lr", type=float, default=0.001,
                        help="Adam learning rate (default 0.001)")
    parser.add_argument("--beta1", type=float, default=0.9)
    parser.add_argument("--beta2", type=float, default=0.999)
    parser.add_argument("--epsilon", type=float, default=1e-7)
    parser.add_argument("--init-stdev", type=float, default=0.05,
                        help="stdev of the normal weight init (default 0.05)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iotprint",
        description="IoT device fingerprinting from TCP session payloads")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixtures",
                       help="generate a synthetic pcap corpus for testing")
    p.add_argument("out_dir")
    p.add_argument("--devices", type=int, default=4)
    p.add_argument("--sessions", type=int, default=1300,
                   help="sessions per device (default 1300)")
    p.add_argument("--iot", type=int, default=None,
                   help="how many devices are IoT (default: all but one)")
    p.add_argument("--spec", help="JSON device list instead of generated devices")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("preprocess",
                       help="parse pcaps into a per-device IDX corpus")
    p.add_argument("pcap_dir")
    p.add_argument("mac_map", help="TSV: mac<TAB>device name<TAB>iot|non-iot")
    p.add_argument("out_dir")
    p.add_argument("--min-sessions", type=int, default=DEFAULT_MIN_SESSIONS,
                   help="keep devices with MORE than this many sessions "
                        f"(default {DEFAULT_MIN_SESSIONS})")
    p.add_argument("--initiator-only", action="store_true",
                   help="use only device-originated payload bytes")
    p.add_argument("--figures", action="store_true",
                   help="render per-device payload-image grids")
    p.add_argument("--dump-bins", action="store_true",
                   help="also dump deduplicated session payloads as .bin files")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("experiment",
                       help="train and evaluate one labeling scheme")
    p.add_argument("corpus", help="directory written by preprocess")
    p.add_argument("out", help="run output directory")
    p.add_argument("--scheme", required=True,
                   help="1-5 or name (e.g. multiclass, unknown-detection)")
    p.add_argument("--target", help="target device for schemes 2-3")
    p.add_argument("--exclude", help="excluded device for scheme 5")
    p.add_argument("--rotate", action="store_true",
                   help="repeat the run for every IoT device")
    p.add_argument("--no-verify", action="store_true",
                   help="skip corpus manifest verification")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("predict", help="classify sessions with a trained model")
    p.add_argument("model", help="model.iotp written by experiment")
    p.add_argument("input", help="pcap file, .bin payload, or directory of .bin")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the calibrated unknown threshold")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("kfold", help="k-fold cross-validation (schemes 1-4)")
    p.add_argument("corpus")
    p.add_argument("out", help="CSV output path")
    p.add_argument("--scheme", required=True)
    p.add_argument("--target", help="target device for schemes 2-3")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--no-verify", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_kfold)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (*USAGE_ERRORS, _UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IotprintError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
