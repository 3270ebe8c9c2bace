"""Command-line entry point: ``hbe <subcommand> ...`` (or ``python -m hbe``).

Settings resolve as command-line flag > ``--config`` file > built-in default.
The config file holds ``key = value`` lines named like the TrainConfig and
ArchSpec fields (``epochs = 30``, ``cell_type = lstm``); ``#`` starts a comment.

Exit codes: 0 ok, 1 runtime failure, 2 usage error or missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .evaluation import (
    VARIANTS,
    MissingBundlesError,
    benchmark_latency,
    bundle_paths,
    get_protocol,
    run_ablation,
    run_protocol,
    train_records,
    write_protocol_outputs,
)
from .models import ArchSpec, classify_beat, load_bundle, save_bundle
from .qrs import StreamBuffer, segment_beats
from .record_io import CLASSES, MITDB_RECORDS, load_record, partition_dataset
from .synthetic import write_synthetic_database
from .training import GridSpec, TrainConfig, build_global_pool, label_record, local_mean_rr, train_patient
from .wavelet import WaveletSpec, downsample2, wavelet_features

log = logging.getLogger("hbe")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or missing input; exits with code 2."""


# --------------------------------------------------------------------------
# config


def _field_types():
    out = {}
    for cls in (TrainConfig, ArchSpec):
        for f in fields(cls):
            if f.name != "arch":
                out[f.name] = (cls, f.type)
    return out


def _coerce(name, text, typ):
    typ = str(typ)
    try:
        if "bool" in typ:
            low = text.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if "tuple" in typ:
            return tuple(int(v) for v in text.replace(",", " ").split())
        if "float" in typ:
            return float(text)
        if "int" in typ:
            return int(text)
        return text.strip()
    except ValueError:
        raise UsageError(f"config: bad value for {name}: {text!r}") from None


def read_config(path) -> dict:
    """Parse a ``key = value`` file into typed TrainConfig / ArchSpec overrides."""
    types = _field_types()
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = _coerce(key, val.strip("\"'"), types[key][1])
    return out


def resolve_config(args, flag_names=()) -> TrainConfig:
    """Defaults, then the config file, then explicit command-line flags."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for name in flag_names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    types = _field_types()
    arch_kw = {k: v for k, v in values.items() if types[k][0] is ArchSpec}
    cfg_kw = {k: v for k, v in values.items() if types[k][0] is TrainConfig}
    try:
        return TrainConfig(arch=ArchSpec(**arch_kw), **cfg_kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def config_dict(cfg: TrainConfig) -> dict:
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "arch"}
    d["arch"] = cfg.arch.to_dict()
    return d


def _versions() -> dict:
    import scipy

    out = {"hbe": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "backend": backend()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    return out


def manifest(command: str, args, cfg: TrainConfig | None = None, extra: dict | None = None) -> dict:
    conf = config_dict(cfg) if cfg is not None else None
    blob = json.dumps(conf, sort_keys=True).encode()
    skip = {"func", "data_dir", "out", "bundles", "bundle", "config"}
    argv = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    m = {"command": command, "arguments": argv, "config": conf,
         "config_sha256": hashlib.sha256(blob).hexdigest(), "versions": _versions()}
    if extra:
        m.update(extra)
    return m


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return None if np.isnan(x) else float(x)
    if isinstance(x, (set, tuple)):
        return list(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


def write_atomic_dir(out, fill) -> Path:
    """Build ``out`` in a sibling temp directory, then swap it into place."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        fill(tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if out.exists():
        old = out.parent / f".{out.name}.old-{os.getpid()}"
        out.rename(old)
    tmp.rename(out)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)
    return out


# --------------------------------------------------------------------------
# helpers


def _data_dir(args) -> Path:
    d = Path(args.data_dir)
    if not d.is_dir():
        raise UsageError(f"data directory not found: {d} (set --data-dir or HBE_DATA_DIR)")
    return d


def _load(data_dir, rid):
    try:
        return load_record(data_dir, rid)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def _records_arg(text) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected record ids, got {text!r}") from None


def _pool(data_dir, split, cfg):
    try:
        return build_global_pool(data_dir, split, cfg.minutes, cfg.match_tolerance_s)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


_TRAIN_FLAGS = ("minutes", "seed", "epochs", "batch_size", "cell_type", "n_layers", "frame_width", "pca_k")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    ids = args.records or list(MITDB_RECORDS)
    rids = [r for r in ids if r not in partition_dataset().excluded]
    write_synthetic_database(args.out, rids, minutes=args.minutes, seed=args.seed)
    print(f"wrote {len(rids)} synthetic records to {args.out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    data_dir = _data_dir(args)
    rec = _load(data_dir, args.record)
    lr = label_record(rec)
    cutoff = int(round(5.0 * 60 * rec.sampling_rate))
    rr_train = local_mean_rr(lr, cutoff)
    leads = np.vstack([rec.millivolts(1), rec.millivolts(2)])
    beats = segment_beats(leads, lr.peaks, rec.sampling_rate, rr_train)
    n = beats[0].x_ecg.shape[1] if beats else 252
    cols = ["r_index", "label", "rr1", "rr2", "rr_local", "rr_train"] + [f"ecg_{k}" for k in range(n)]
    spec = WaveletSpec(args.wavelet_order, 4)
    if args.with_wavelet and beats:
        nw = wavelet_features(downsample2(beats[0].x_ecg[0]), spec).x_w.size
        cols += [f"w_{k}" for k in range(nw)]
    lines = [",".join(cols)]
    for b in beats:
        lab = lr.labels[b.beat_number]
        row = [str(b.r_index), CLASSES[lab] if lab >= 0 else "?"]
        row += [f"{v:.6f}" for v in b.rr]
        row += [f"{v:.6f}" for v in b.x_ecg[0]]
        if args.with_wavelet:
            row += [f"{v:.6f}" for v in wavelet_features(downsample2(b.x_ecg[0]), spec).x_w]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(f".{out.name}.tmp")
        tmp.write_text(text)
        tmp.replace(out)
        print(f"{len(beats)} beats -> {out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = _data_dir(args)
    cfg = resolve_config(args, _TRAIN_FLAGS)
    split = partition_dataset()
    records = [args.record] if args.record is not None else list(get_protocol(args.protocol).records)
    for rid in records:
        if rid in split.excluded:
            raise UsageError(f"record {rid} is excluded (paced beats)")
        _load(data_dir, rid)
    pool = _pool(data_dir, split, cfg)
    grid = GridSpec() if args.grid else None
    t0 = time.perf_counter()
    if args.record is not None:
        patient = label_record(_load(data_dir, args.record))
        bundle, report = train_patient(patient, pool, split, cfg, grid=grid, n_jobs=args.jobs)
        m = manifest("train", args, cfg, {"records": [args.record]})

        def fill(tmp):
            save_bundle(bundle, tmp)
            (tmp / "report.json").write_text(_dump(report))
            (tmp / "manifest.json").write_text(_dump(m))

        write_atomic_dir(args.out, fill)
        print(f"record {args.record}: bundle -> {args.out} ({time.perf_counter() - t0:.1f} s, "
              f"{report['n_train']} train beats)")
        return EXIT_OK
    if grid is not None:
        raise UsageError("--grid is only supported with --record")
    trained = train_records(records, data_dir, pool, split, cfg, n_jobs=args.jobs)
    m = manifest("train", args, cfg, {"records": records})

    def fill_all(tmp):
        for rid, (bundle, report) in trained.items():
            save_bundle(bundle, tmp / str(rid))
            (tmp / str(rid) / "report.json").write_text(_dump(report))
        (tmp / "manifest.json").write_text(_dump(m))

    write_atomic_dir(args.out, fill_all)
    print(f"trained {len(trained)} bundles -> {args.out} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data_dir = _data_dir(args)
    spec = get_protocol(args.protocol)
    try:
        paths = bundle_paths(args.bundles, spec.records)
    except MissingBundlesError as exc:
        raise UsageError(str(exc)) from None
    result = run_protocol(spec, paths, data_dir, mode=args.mode)
    latency = None
    if args.latency_beats > 0:
        rid = spec.records[0]
        latency = benchmark_latency(load_bundle(paths[rid]), label_record(_load(data_dir, rid)),
                                    max_beats=args.latency_beats)
        latency["record"] = rid
    m = manifest("evaluate", args, None, {"records": list(spec.records)})

    def fill(tmp):
        write_protocol_outputs(result, tmp)
        if latency is not None:
            (tmp / "latency.json").write_text(_dump(latency))
        (tmp / "manifest.json").write_text(_dump(m))

    write_atomic_dir(args.out, fill)
    agg = result.metrics()
    for task in ("VEB", "SVEB"):
        mm = agg[task]
        print(f"{spec.name} {task}: " + " ".join(
            f"{k}={'nan' if mm[k] is None else f'{mm[k]:.4f}'}" for k in ("acc", "sen", "spe", "ppr", "f1")))
    print(f"results -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    data_dir = _data_dir(args)
    cfg = resolve_config(args, _TRAIN_FLAGS)
    spec = get_protocol(args.protocol)
    split = partition_dataset()
    records = args.records or list(spec.records)
    if args.records:
        spec = replace(spec, name=f"{spec.name}-subset", records=tuple(records))
    for rid in records:
        _load(data_dir, rid)
    pool = _pool(data_dir, split, cfg)
    reports = {}
    baselines: dict = {}
    for variant in args.variant:
        reports[variant] = run_ablation(variant, spec, data_dir, pool, split, cfg,
                                        seeds=args.seeds, n_jobs=args.jobs, baselines=baselines)
    m = manifest("ablate", args, cfg, {"records": list(spec.records)})

    def fill(tmp):
        (tmp / "ablation.json").write_text(_dump({v: r.to_json() for v, r in reports.items()}))
        (tmp / "manifest.json").write_text(_dump(m))

    write_atomic_dir(args.out, fill)
    for v, r in reports.items():
        for s, d in r.deltas().items():
            print(f"{v} seed={s}: dF1 VEB={d['VEB']:+.4f} SVEB={d['SVEB']:+.4f}")
    return EXIT_OK


def cmd_stream(args) -> int:
    data_dir = _data_dir(args)
    rec = _load(data_dir, args.record)
    try:
        bundle = load_bundle(args.bundle)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    rate = rec.sampling_rate
    rr = bundle.info.get("train_mean_rr", 0.8)
    buf = StreamBuffer(rate, rr, n_leads=2)
    leads = np.vstack([rec.millivolts(1), rec.millivolts(2)])
    n = leads.shape[1] if args.seconds is None else min(leads.shape[1], int(args.seconds * rate))
    out = sys.stdout
    out.write("beat,r_index,label,p_max,compute_ms,delay_s\n")
    count = 0
    max_delay = 0.0

    def emit(beats, now):
        nonlocal count, max_delay
        for b in beats:
            t0 = time.perf_counter()
            label, p = classify_beat(bundle, b)
            ms = (time.perf_counter() - t0) * 1e3
            delay = (now - b.r_index) / rate
            max_delay = max(max_delay, delay)
            count += 1
            if not args.quiet:
                out.write(f"{b.beat_number},{b.r_index},{label},{float(np.max(p)):.4f},{ms:.3f},{delay:.3f}\n")

    for s in range(0, n, args.chunk):
        e = min(s + args.chunk, n)
        emit(buf.push(leads[:, s:e]), e)
    emit(buf.flush(), n)
    print(f"# {count} beats classified, {buf.peaks_detected} peaks detected, "
          f"max emission delay {max_delay:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    data_dir = _data_dir(args)
    try:
        bundle = load_bundle(args.bundle)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    patient = label_record(_load(data_dir, args.record))
    uses = ["numba", "numpy"] if args.compare else [None]
    res = {}
    for use in uses:
        r = benchmark_latency(bundle, patient, repetitions=args.repetitions, max_beats=args.beats, use=use)
        res[r["backend"]] = r
        print(f"{r['backend']}: p50={r['p50_ms']:.3f} ms p95={r['p95_ms']:.3f} ms max={r['max_ms']:.3f} ms "
              f"({'PASS' if r['pass'] else 'FAIL'} vs {r['budget_ms']:.0f} ms budget)")
    print(f"analytic multiplies per beat: {next(iter(res.values()))['analytic_ops']['total']:.0f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(f".{out.name}.tmp")
        tmp.write_text(_dump(res))
        tmp.replace(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hbe", description="Patient-specific ECG heartbeat classification.",
        epilog="Settings precedence: command-line flag > --config file > default. "
               "HBE_DATA_DIR sets the default data directory.")
    p.add_argument("--version", action="version", version=f"hbe {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False):
        sp.add_argument("--data-dir", default=os.environ.get("HBE_DATA_DIR", "data"),
                        help="record directory (default: $HBE_DATA_DIR or ./data)")
        if config:
            sp.add_argument("--config", help="key = value file with TrainConfig/ArchSpec settings")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--minutes", type=float, help="local training data: 5 or 2.5")
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--cell-type", choices=("simple", "lstm", "peephole", "gru"))
            sp.add_argument("--n-layers", type=int)
            sp.add_argument("--frame-width", type=int)
            sp.add_argument("--pca-k", type=int)
            sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("synth", help="write a synthetic MIT-BIH-format database")
    sp.add_argument("--out", required=True)
    sp.add_argument("--records", type=_records_arg)
    sp.add_argument("--minutes", type=float, default=10.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("segment", help="write detected beats of a record as CSV")
    common(sp)
    sp.add_argument("--record", type=int, required=True)
    sp.add_argument("--with-wavelet", action="store_true", help="append the X_w columns")
    sp.add_argument("--wavelet-order", type=int, default=2, choices=(1, 2, 3, 4))
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("train", help="train a patient bundle (or one per protocol record)")
    common(sp, config=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--record", type=int)
    g.add_argument("--protocol", choices=("A_VEB", "A_SVEB", "B", "C"))
    sp.add_argument("--grid", action="store_true", help="grid-search the architecture first")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score bundles under a protocol")
    common(sp)
    sp.add_argument("--protocol", required=True, choices=("A_VEB", "A_SVEB", "B", "C"))
    sp.add_argument("--bundles", required=True, help="directory with one <record>/ bundle per record")
    sp.add_argument("--mode", choices=("blend", "alpha_only", "beta_only"))
    sp.add_argument("--latency-beats", type=int, default=200, help="0 skips latency.json")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="retrain under ablation variants and report F1 deltas")
    common(sp, config=True)
    sp.add_argument("--variant", required=True, nargs="+", choices=VARIANTS)
    sp.add_argument("--protocol", default="C", choices=("A_VEB", "A_SVEB", "B", "C"))
    sp.add_argument("--records", type=_records_arg, help="restrict to these records")
    sp.add_argument("--seeds", type=_records_arg, default=[0])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("stream", help="replay a record through the streaming classifier")
    common(sp)
    sp.add_argument("--record", type=int, required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--chunk", type=int, default=36, help="samples per push (36 = 0.1 s)")
    sp.add_argument("--seconds", type=float, help="replay only the first N seconds")
    sp.add_argument("--quiet", action="store_true", help="print only the summary")
    sp.set_defaults(func=cmd_stream)

    sp = sub.add_parser("bench", help="per-beat latency benchmark")
    common(sp)
    sp.add_argument("--record", type=int, required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--beats", type=int, default=300)
    sp.add_argument("--repetitions", type=int, default=1)
    sp.add_argument("--compare", action="store_true", help="time both numba and numpy kernels")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hbe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # output consumer went away (e.g. piped into head)
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK
    except KeyboardInterrupt:
        return EXIT_FAIL
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        log.debug("failure", exc_info=True)
        print(f"hbe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
