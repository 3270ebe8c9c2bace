"""Confusion matrices, AAMI binary metrics, protocols, ablations and latency.

Scoring couples detection and classification as follows: every annotated
beat after the evaluation start is scored.  A beat that the detector found
and the classifier labelled counts with its predicted label; an annotated
beat without a classified detection counts as predicted N (a miss can never
raise an ectopic alarm).  Detections with no annotation inside the matching
window are excluded from the matrix and reported separately.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._accel import backend
from .models import ModelBundle, classify_beat, inference_op_count, load_bundle, predict
from .qrs import BeatSegment, rr_features, segment
from .record_io import CLASSES, CLASSES_5, load_record
from .training import (
    GlobalPool,
    LabelledRecord,
    TrainConfig,
    beats_after,
    label_record,
    local_mean_rr,
    train_patient,
)

log = logging.getLogger(__name__)

EVAL_START_MINUTES = 5.0  # test data always starts here, also for the 2.5-minute ablation
_MERGE = np.array([0, 0, 0, 1, 2, 3, 4])  # 7-class index -> 5-class index


class MissingBundlesError(FileNotFoundError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("missing bundles for records: " + ", ".join(str(r) for r in self.missing))


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows = truth, cols = prediction
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        c = np.asarray(self.counts)
        n = len(self.classes)
        if c.shape != (n, n):
            raise ValueError(f"confusion matrix must be {n}x{n}, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def zeros(cls, classes=CLASSES) -> "ConfusionMatrix":
        return cls(np.zeros((len(classes), len(classes)), np.int64), tuple(classes))

    @classmethod
    def from_labels(cls, truth, pred, classes=CLASSES) -> "ConfusionMatrix":
        n = len(classes)
        m = np.zeros((n, n), np.int64)
        np.add.at(m, (np.asarray(truth, np.int64), np.asarray(pred, np.int64)), 1)
        return cls(m, tuple(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ValueError("cannot add confusion matrices over different classes")
        return ConfusionMatrix(self.counts + other.counts, self.classes)

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.classes == other.classes
                and np.array_equal(self.counts, other.counts))

    __hash__ = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred", *self.classes])
        for name, row in zip(self.classes, self.counts):
            w.writerow([name, *row.tolist()])
        return buf.getvalue()


def merge_to_5(cm7: ConfusionMatrix) -> ConfusionMatrix:
    """Sum N, L and R rows and columns into N."""
    if cm7.classes != CLASSES:
        raise ValueError("merge_to_5 expects the 7-class matrix")
    m = np.zeros((5, 5), np.int64)
    np.add.at(m, (_MERGE[:, None], _MERGE[None, :]), cm7.counts)
    return ConfusionMatrix(m, CLASSES_5)


def _ratio(a, b) -> float:
    return a / b if b else math.nan


@dataclass(frozen=True)
class BinaryMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    sen: float
    spe: float
    ppr: float
    f1: float
    g: float

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in self.__dict__.items()}


def binary_metrics(cm5: ConfusionMatrix, positive: str) -> BinaryMetrics:
    """One-vs-rest metrics for ``positive`` in {V, S}; undefined ratios are NaN."""
    if cm5.classes != CLASSES_5:
        raise ValueError("binary_metrics expects the merged 5-class matrix")
    if positive not in ("V", "S"):
        raise ValueError("positive class must be V or S")
    k = CLASSES_5.index(positive)
    c = cm5.counts
    tp = int(c[k, k])
    fn = int(c[k].sum() - tp)
    fp = int(c[:, k].sum() - tp)
    tn = int(c.sum() - tp - fn - fp)
    sen = _ratio(tp, tp + fn)
    ppr = _ratio(tp, tp + fp)
    f1 = _ratio(2 * sen * ppr, sen + ppr) if not (math.isnan(sen) or math.isnan(ppr)) else math.nan
    g = math.sqrt(sen * ppr) if not (math.isnan(sen) or math.isnan(ppr)) else math.nan
    return BinaryMetrics(tp, tn, fp, fn, _ratio(tp + tn, tp + tn + fp + fn), sen,
                         _ratio(tn, tn + fp), ppr, f1, g)


# --------------------------------------------------------------------------
# protocols


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    records: tuple[int, ...]


_A_VEB = (200, 202, 210, 213, 214, 219, 221, 228, 231, 233, 234)
PROTOCOLS = {
    "A_VEB": ProtocolSpec("A_VEB", _A_VEB),
    "A_SVEB": ProtocolSpec("A_SVEB", tuple(sorted(_A_VEB + (212, 222, 232)))),
    "B": ProtocolSpec("B", (100, 103, 105, 111, 113, 117, 121, 123, 200, 202, 210, 212, 213, 214,
                            219, 221, 222, 228, 231, 232, 233, 234)),
    "C": ProtocolSpec("C", (200, 201, 202, 203, 205, 207, 208, 209, 210, 212, 213, 214, 215, 219,
                            220, 221, 222, 223, 228, 230, 231, 232, 233, 234)),
}


def get_protocol(name) -> ProtocolSpec:
    """Look up a protocol by name; a :class:`ProtocolSpec` passes through."""
    if isinstance(name, ProtocolSpec):
        return name
    try:
        return PROTOCOLS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown protocol {name!r}; choose from {', '.join(PROTOCOLS)}") from None


@dataclass
class PatientResult:
    record: int
    cm7: ConfusionMatrix
    false_detections: int  # detections with no annotation in the window (excluded)
    missed: int  # annotated beats without a classified detection (scored as N)
    scored_detected: int

    def row(self) -> dict:
        cm5 = merge_to_5(self.cm7)
        out = {"record": self.record, "beats": self.cm7.total, "missed": self.missed,
               "false_detections": self.false_detections}
        for pos in ("V", "S"):
            m = binary_metrics(cm5, pos)
            for k in ("tp", "fn", "fp", "tn", "acc", "sen", "spe", "ppr", "f1", "g"):
                out[f"{'veb' if pos == 'V' else 'sveb'}_{k}"] = getattr(m, k)
        return out


def evaluate_patient(bundle: ModelBundle, patient: LabelledRecord,
                     eval_start_minutes: float = EVAL_START_MINUTES) -> PatientResult:
    """Score every annotated beat from ``eval_start_minutes`` on."""
    start = int(round(eval_start_minutes * 60 * patient.rate))
    train_rr = bundle.info.get("train_mean_rr")
    if train_rr is None:
        train_rr = local_mean_rr(patient, start)
    beats, labels = beats_after(patient, train_rr, start)
    pred = predict(bundle, beats)[0] if beats else np.zeros(0, np.int64)
    truth, guess, used = [], [], set()
    false_det = 0
    for b, lab, p in zip(beats, labels, pred):
        j = int(patient.matches[b.beat_number])
        if j < 0:
            false_det += 1
            continue
        truth.append(int(lab))
        guess.append(int(p))
        used.add(j)
    scored = len(truth)
    ann_pos = patient.record.beat_positions()
    ann_lab = [CLASSES.index(c) for c in patient.record.beat_labels()]
    missed = 0
    for j, pos in enumerate(ann_pos):
        if pos >= start and j not in used:
            truth.append(ann_lab[j])
            guess.append(0)
            missed += 1
    cm = ConfusionMatrix.from_labels(truth, guess)
    return PatientResult(patient.record.record_id, cm, false_det, missed, scored)


@dataclass
class ProtocolResult:
    protocol: str
    patients: list[PatientResult]

    @property
    def cm7(self) -> ConfusionMatrix:
        total = ConfusionMatrix.zeros()
        for p in self.patients:
            total = total + p.cm7
        return total

    @property
    def cm5(self) -> ConfusionMatrix:
        return merge_to_5(self.cm7)

    def metrics(self) -> dict:
        cm5 = self.cm5
        return {"VEB": binary_metrics(cm5, "V").to_dict(), "SVEB": binary_metrics(cm5, "S").to_dict(),
                "beats": self.cm7.total,
                "missed": sum(p.missed for p in self.patients),
                "false_detections": sum(p.false_detections for p in self.patients)}

    def f1(self, positive: str) -> float:
        return binary_metrics(self.cm5, positive).f1

    def to_json(self) -> dict:
        rows = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in p.row().items()}
                for p in self.patients]
        return {"protocol": self.protocol, "records": [p.record for p in self.patients],
                "aggregate": self.metrics(), "per_record": rows}


def bundle_paths(bundle_dir, records) -> dict[int, Path]:
    """``<bundle_dir>/<record>/`` for each record; raises listing every missing one."""
    base = Path(bundle_dir)
    paths = {r: base / str(r) for r in records}
    missing = [r for r, p in paths.items() if not (p / "meta.json").is_file()]
    if missing:
        raise MissingBundlesError(missing)
    return paths


def run_protocol(protocol, bundles, data_dir, mode: str | None = None) -> ProtocolResult:
    """Evaluate one bundle per protocol record and pool the confusion counts.

    ``bundles`` maps record id to a :class:`ModelBundle` or to a bundle directory.
    """
    spec = get_protocol(protocol)
    missing = [r for r in spec.records if r not in bundles]
    if missing:
        raise MissingBundlesError(missing)
    results = []
    for rid in spec.records:
        b = bundles[rid]
        if not isinstance(b, ModelBundle):
            b = load_bundle(b)
        if mode is not None:
            b = b.with_mode(mode)
        patient = label_record(load_record(data_dir, rid))
        results.append(evaluate_patient(b, patient))
        log.info("record %d: %s", rid, results[-1].row())
    return ProtocolResult(spec.name, results)


def per_record_csv(result: ProtocolResult) -> str:
    rows = [p.row() for p in result.patients]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()})
    return buf.getvalue()


def write_protocol_outputs(result: ProtocolResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion7.csv").write_text(result.cm7.to_csv())
    (out / "confusion5.csv").write_text(result.cm5.to_csv())
    (out / "per_record.csv").write_text(per_record_csv(result))
    (out / "metrics.json").write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# training many patients, ablations

VARIANTS = ("baseline", "no_wavelet", "db1", "db3", "db4", "simple_cell", "gru", "peephole",
            "alpha_only", "beta_only", "single_lead", "minutes_2_5")


def variant_config(variant: str, cfg: TrainConfig) -> tuple[TrainConfig, str]:
    """Training config and evaluation mode for an ablation variant."""
    a = cfg.arch
    table = {
        "baseline": (cfg, "blend"),
        "no_wavelet": (replace(cfg, arch=replace(a, use_wavelet=False)), "blend"),
        "db1": (replace(cfg, arch=replace(a, wavelet_order=1)), "blend"),
        "db3": (replace(cfg, arch=replace(a, wavelet_order=3)), "blend"),
        "db4": (replace(cfg, arch=replace(a, wavelet_order=4)), "blend"),
        "simple_cell": (replace(cfg, arch=replace(a, cell_type="simple")), "blend"),
        "gru": (replace(cfg, arch=replace(a, cell_type="gru")), "blend"),
        "peephole": (replace(cfg, arch=replace(a, cell_type="peephole")), "blend"),
        # the two heads are trained independently of the blend, so these reuse baseline weights
        "alpha_only": (cfg, "alpha_only"),
        "beta_only": (cfg, "beta_only"),
        "single_lead": (replace(cfg, arch=replace(a, n_leads=1)), "blend"),
        "minutes_2_5": (replace(cfg, minutes=2.5), "blend"),
    }
    if variant not in table:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return table[variant]


_WORKER = {}


def _init_worker(pool, split, data_dir):
    _WORKER.update(pool=pool, split=split, data_dir=data_dir)


def _train_one(args):
    rid, cfg = args
    patient = label_record(load_record(_WORKER["data_dir"], rid))
    return rid, train_patient(patient, _WORKER["pool"], _WORKER["split"], cfg)


def train_records(records, data_dir, pool: GlobalPool, split, cfg: TrainConfig, n_jobs: int = 1):
    """Train one bundle per record.  Returns ``{record: (bundle, report)}``."""
    jobs = [(int(r), cfg) for r in records]
    if n_jobs == 1:
        _init_worker(pool, split, data_dir)
        try:
            return dict(_train_one(j) for j in jobs)
        finally:
            _WORKER.clear()
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(pool, split, data_dir)) as ex:
        return dict(ex.map(_train_one, jobs))


@dataclass
class AblationReport:
    variant: str
    protocol: str
    seeds: list
    baseline_f1: dict = field(default_factory=dict)  # seed -> {"VEB": f1, "SVEB": f1}
    variant_f1: dict = field(default_factory=dict)

    def deltas(self) -> dict:
        out = {}
        for s in self.seeds:
            b, v = self.baseline_f1[s], self.variant_f1[s]
            out[s] = {k: v[k] - b[k] for k in ("VEB", "SVEB")}
        return out

    def majority_decrease(self) -> dict:
        """Per task, whether F1 dropped for a strict majority of seeds."""
        d = self.deltas()
        n = len(self.seeds)
        return {k: sum(1 for s in self.seeds if d[s][k] < 0) * 2 > n for k in ("VEB", "SVEB")}

    def to_json(self) -> dict:
        def clean(x):
            return {str(s): {k: (None if math.isnan(v) else v) for k, v in d.items()} for s, d in x.items()}

        return {"variant": self.variant, "protocol": self.protocol, "seeds": list(self.seeds),
                "baseline_f1": clean(self.baseline_f1), "variant_f1": clean(self.variant_f1),
                "delta_f1": clean(self.deltas()), "majority_decrease": self.majority_decrease()}


def _f1s(result: ProtocolResult) -> dict:
    return {"VEB": result.f1("V"), "SVEB": result.f1("S")}


def run_ablation(variant: str, protocol, data_dir, pool: GlobalPool, split, cfg: TrainConfig,
                 seeds=(0,), n_jobs: int = 1, baselines: dict | None = None) -> AblationReport:
    """Retrain under ``variant`` and report F1 deltas against the baseline, per seed.

    ``baselines`` may carry already-trained baseline bundles per seed
    (``{seed: {record: bundle}}``); it is filled in place so several variants
    can share them.
    """
    vcfg, mode = variant_config(variant, cfg)
    spec = get_protocol(protocol)
    baselines = {} if baselines is None else baselines
    rep = AblationReport(variant, spec.name, list(seeds))
    for seed in seeds:
        if seed not in baselines:
            trained = train_records(spec.records, data_dir, pool, split, replace(cfg, seed=seed), n_jobs)
            baselines[seed] = {r: b for r, (b, _) in trained.items()}
        base = run_protocol(spec, baselines[seed], data_dir)
        rep.baseline_f1[seed] = _f1s(base)
        if vcfg == cfg:
            bundles = baselines[seed]
        else:
            trained = train_records(spec.records, data_dir, pool, split, replace(vcfg, seed=seed), n_jobs)
            bundles = {r: b for r, (b, _) in trained.items()}
        rep.variant_f1[seed] = _f1s(run_protocol(spec, bundles, data_dir, mode=mode))
    return rep


# --------------------------------------------------------------------------
# latency


def _pin_single_cpu():
    if not hasattr(os, "sched_getaffinity"):
        return None
    old = os.sched_getaffinity(0)
    os.sched_setaffinity(0, {min(old)})
    return old


def benchmark_latency(bundle: ModelBundle, patient: LabelledRecord, repetitions: int = 1,
                      max_beats: int = 300, budget_ms: float = 300.0, warmup: int = 5,
                      use: str | None = None) -> dict:
    """Wall-clock time of segment -> features -> classify for single beats.

    Runs on one CPU.  The first ``warmup`` beats (JIT compilation, caches)
    are not timed.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    rate = patient.rate
    leads = np.vstack([patient.record.millivolts(1), patient.record.millivolts(2)])
    peaks = patient.peaks
    train_rr = bundle.info.get("train_mean_rr", 0.8)
    usable = [i for i in range(1, peaks.size - 1)
              if peaks[i] - round(0.25 * rate) >= 0 and peaks[i] + round(0.45 * rate) <= leads.shape[1]]
    if not usable:
        raise ValueError("record has no classifiable beats")
    sel = usable[: max_beats + warmup]
    def one(i):
        x = segment(leads, int(peaks[i]), rate)
        rr = rr_features(peaks, i, train_rr, rate)
        return classify_beat(bundle, BeatSegment(int(peaks[i]), x, rr, i), use=use)

    old = _pin_single_cpu()
    times = []
    try:
        for i in sel[:warmup]:
            one(i)
        for _ in range(repetitions):
            for i in sel[warmup:] or sel:
                t0 = time.perf_counter()
                one(i)
                times.append((time.perf_counter() - t0) * 1e3)
    finally:
        if old is not None:
            os.sched_setaffinity(0, old)
    t = np.array(times)
    p95 = float(np.percentile(t, 95))
    return {
        "beats_timed": int(t.size),
        "repetitions": int(repetitions),
        "p50_ms": float(np.percentile(t, 50)),
        "p95_ms": p95,
        "max_ms": float(t.max()),
        "mean_ms": float(t.mean()),
        "budget_ms": float(budget_ms),
        "pass": bool(p95 < budget_ms),
        "backend": use or backend(),
        "analytic_ops": inference_op_count(bundle.arch),
    }
