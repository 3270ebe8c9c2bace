"""Acceptance suite: one PASS/FAIL line per headline criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the report while it runs;
the lines are also collected into the terminal summary at the end of a plain
``pytest`` run.  Criteria that need the real MIT-BIH database look for it under
``HBE_DATA_DIR``.  Without it they report FAIL with the reason and are marked
xfail, since no synthetic stand-in can answer them.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hbe.evaluation import (
    PROTOCOLS, ConfusionMatrix, benchmark_latency, binary_metrics, get_protocol, merge_to_5,
    run_ablation, run_protocol, train_records,
)
from hbe.models import ArchSpec, inference_op_count
from hbe.qrs import detect_r_peaks, match_peaks
from hbe.record_io import CLASSES, load_record, partition_dataset
from hbe.rnn import CELL_TYPES, COST_CONSTANTS, cell_cost
from hbe.synthetic import write_synthetic_database
from hbe.training import (
    TrainConfig, assemble_train_set, build_global_pool, held_out_beats, label_record,
)
from hbe.wavelet import WaveletSpec, wavedec, wavelet_cost, waverec

from oracles import gradient_check, random_confusion, random_inputs, small_models

REPORT: list[str] = []
MITDB_100_SAMPLES = 650000  # 30 min 05.556 s at 360 Hz


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    REPORT.append(line)
    print(line)
    return ok


def real_data_dir() -> Path | None:
    """HBE_DATA_DIR, if it holds the genuine database (judged by record 100's length)."""
    d = os.environ.get("HBE_DATA_DIR")
    if not d:
        return None
    try:
        rec = load_record(d, 100)
    except (FileNotFoundError, ValueError):
        return None
    return Path(d) if rec.n_samples == MITDB_100_SAMPLES else None


def blocked(criterion: str):
    report(criterion, False, "MIT-BIH record not found under HBE_DATA_DIR; criterion not evaluable here")
    pytest.xfail("requires the MIT-BIH Arrhythmia Database (set HBE_DATA_DIR)")


# --------------------------------------------------------------------------


def test_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for cell in CELL_TYPES:
        for topology in ("alpha", "beta"):
            for seed in range(5):
                rng = np.random.default_rng(seed)
                arch, alpha, beta = small_models(cell, 1, rng)
                model = alpha if topology == "alpha" else beta
                seqs, labels = random_inputs(model, arch, rng)
                worst = max(worst, gradient_check(model, seqs, labels, rng))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    assert report("gradient check (4 cells x 2 topologies x 5 seeds)", ok,
                  f"max rel err {worst:.2e} < 1e-4, {secs:.1f} s")


def test_wavelet_reconstruction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    rec_err = 0.0
    energy_err = 0.0
    for k in range(100):
        order = 1 + k % 4
        n = int(rng.integers(16, 513))
        spec = WaveletSpec(order, 4)
        x = rng.normal(size=n)
        coeffs = wavedec(x, spec)
        rec_err = max(rec_err, float(np.max(np.abs(waverec(coeffs, spec, length=n) - x))))
        # energy is preserved exactly only when no level needs padding
        y = x[: n - n % 16]
        e = sum(float(np.sum(c ** 2)) for c in wavedec(y, spec))
        energy_err = max(energy_err, abs(e - float(np.sum(y ** 2))) / float(np.sum(y ** 2)))
    secs = time.perf_counter() - t0
    ok = rec_err < 1e-8 and energy_err < 1e-8 and secs < 10
    assert report("wavelet perfect reconstruction + Parseval", ok,
                  f"round trip {rec_err:.1e}, energy {energy_err:.1e}, {secs:.2f} s")


def test_cost_model():
    checks = [wavelet_cost(128, 2, 4) == 480, wavelet_cost(77, 3, 1) == 231]
    for order in (1, 2, 3, 4):
        for levels in (1, 2, 3, 4, 5):
            n = 2 ** levels * 9
            checks.append(wavelet_cost(n, order, levels) == n * order * sum(0.5 ** k for k in range(levels)))
    expected_ab = {"simple": (1, 1), "lstm": (4, 4), "peephole": (4, 4), "gru": (3, 3)}
    for cell, (a, b) in expected_ab.items():
        c, d = COST_CONSTANTS[cell][2:]
        for nx, nh in ((9, 30), (18, 50), (1, 1), (3, 0)):
            checks.append(cell_cost(cell, nx, nh) == a * nx * nh + b * nh * nh + c * nh + d)
    quad = lambda nh: COST_CONSTANTS["lstm"][1] * nh * nh
    checks.append(2 * quad(30) == 7200 and quad(60) == 14400)
    inequality = all(2 * cell_cost(cell, 9, 30) < cell_cost(cell, 9, 60) for cell in CELL_TYPES)
    ops = inference_op_count(ArchSpec())
    checks.append(ops["total"] == sum(v for k, v in ops.items() if k != "total"))
    ok = all(checks) and inequality
    assert report("cost model formulas and 2x30 < 1x60", ok,
                  f"{sum(checks)}/{len(checks)} formula checks, inequality {'holds' if inequality else 'broken'}")


def test_r_peak_detection_record_100():
    name = "R-peak detection on record 100 (Se, +P >= 99%)"
    data = real_data_dir()
    if data is None:
        blocked(name)
    t0 = time.perf_counter()
    rec = load_record(data, 100)
    ref = rec.beat_positions()
    peaks = detect_r_peaks(rec.millivolts(1), rec.sampling_rate)
    m = match_peaks(peaks, ref, int(round(0.05 * rec.sampling_rate)))
    tp = int(np.sum(m >= 0))
    se, pp = tp / ref.size, tp / max(peaks.size, 1)
    secs = time.perf_counter() - t0
    assert report(name, se >= 0.99 and pp >= 0.99 and secs < 30,
                  f"Se {se:.4f}, +P {pp:.4f} over {ref.size} beats, {secs:.1f} s")


def test_headline_dataset_c():
    name = "headline metrics on dataset C (VEB Acc >= 97%, F1 >= 85%; SVEB F1 >= 60%)"
    data = real_data_dir()
    if data is None:
        blocked(name)
    t0 = time.perf_counter()
    split = partition_dataset()
    cfg = TrainConfig()
    spec = get_protocol("C")
    pool = build_global_pool(data, split, cfg.minutes, cfg.match_tolerance_s)
    trained = train_records(spec.records, data, pool, split, cfg, n_jobs=os.cpu_count() or 1)
    res = run_protocol(spec, {r: b for r, (b, _) in trained.items()}, data)
    cm5 = merge_to_5(res.cm7)
    veb, sveb = binary_metrics(cm5, "V"), binary_metrics(cm5, "S")
    hours = (time.perf_counter() - t0) / 3600
    ok = veb.acc >= 0.97 and veb.f1 >= 0.85 and sveb.f1 >= 0.60 and hours < 2
    assert report(name, ok, f"VEB Acc {veb.acc:.4f} F1 {veb.f1:.4f}, SVEB F1 {sveb.f1:.4f}, {hours:.2f} h")


def test_ablation_signs():
    name = "ablation signs (4 variants decrease F1; peephole within 2% of lstm)"
    data = real_data_dir()
    if data is None:
        blocked(name)
    split = partition_dataset()
    cfg = TrainConfig()
    pool = build_global_pool(data, split, cfg.minutes, cfg.match_tolerance_s)
    shared: dict = {}
    jobs = os.cpu_count() or 1
    seeds = (0, 1, 2)
    parts = []
    ok = True
    for variant in ("no_wavelet", "alpha_only", "beta_only", "simple_cell"):
        dec = run_ablation(variant, "C", data, pool, split, cfg, seeds, jobs, shared).majority_decrease()
        ok &= dec["VEB"] and dec["SVEB"]
        parts.append(f"{variant} {'down' if dec['VEB'] and dec['SVEB'] else 'NOT down'}")
    d = run_ablation("peephole", "C", data, pool, split, cfg, seeds, jobs, shared).deltas()
    spread = max(abs(np.mean([d[s][k] for s in seeds])) for k in ("VEB", "SVEB"))
    ok &= spread <= 0.02
    parts.append(f"peephole |dF1| {spread:.3f}")
    assert report(name, ok, ", ".join(parts))


def test_latency(trained_200, patient_200):
    bundle, _ = trained_200
    assert bundle.arch == ArchSpec()
    out = benchmark_latency(bundle, patient_200, repetitions=1, max_beats=300)
    ok = out["p95_ms"] < 300 and out["pass"]
    assert report("per-beat latency p95 < 300 ms (desktop, single thread)", ok,
                  f"p50 {out['p50_ms']:.2f} ms, p95 {out['p95_ms']:.2f} ms, {out['backend']} kernels, "
                  f"{out['beats_timed']} beats")


@pytest.fixture(scope="module")
def ds200_db(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds200")
    write_synthetic_database(root, partition_dataset().patient_records, minutes=6.0, seed=3)
    return root


def test_protocol_fidelity_and_leakage(ds200_db, pool, split):
    lists_ok = (
        PROTOCOLS["A_VEB"].records == (200, 202, 210, 213, 214, 219, 221, 228, 231, 233, 234)
        and PROTOCOLS["A_SVEB"].records == (200, 202, 210, 212, 213, 214, 219, 221, 222, 228, 231,
                                            232, 233, 234)
        and PROTOCOLS["B"].records == (100, 103, 105, 111, 113, 117, 121, 123, 200, 202, 210, 212,
                                       213, 214, 219, 221, 222, 228, 231, 232, 233, 234)
        and PROTOCOLS["C"].records == tuple(split.patient_records)
    )
    cfg = TrainConfig(global_per_class=20)
    leaks = []
    for rid in PROTOCOLS["C"].records:
        patient = label_record(load_record(ds200_db, rid))
        train = assemble_train_set(patient, pool, split, cfg)
        local = {b.r_index for b, p in zip(train.beats, train.provenance) if p == "local"}
        test, _ = held_out_beats(patient, cfg, train.train_mean_rr)
        test_r = {b.r_index for b in test}
        sources = set(train.sources[train.provenance == "global"])
        if (local & test_r or max(local) >= train.cutoff or min(test_r) < train.cutoff
                or rid in sources or not sources <= set(split.global_records)):
            leaks.append(rid)
    ok = lists_ok and not leaks
    assert report("protocol record lists + train/test disjointness", ok,
                  f"lists {'match' if lists_ok else 'differ'}, "
                  f"{len(PROTOCOLS['C'].records) - len(leaks)}/{len(PROTOCOLS['C'].records)} patients leak-free")


def test_metric_identities():
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(1000):
        a = ConfusionMatrix(random_confusion(rng), CLASSES)
        b = ConfusionMatrix(random_confusion(rng), CLASSES)
        m5 = merge_to_5(a)
        good = m5.total == a.total and merge_to_5(a + b) == m5 + merge_to_5(b)
        for pos in ("V", "S"):
            if m5.total == 0:
                continue
            m = binary_metrics(m5, pos)
            good &= m.tp + m.fn + m.fp + m.tn == m5.total
            if not math.isnan(m.f1) and m.sen + m.ppr > 0:
                good &= math.isclose(m.f1, 2 * m.sen * m.ppr / (m.sen + m.ppr), abs_tol=1e-12)
                good &= math.isclose(m.g ** 2, m.sen * m.ppr, abs_tol=1e-12)
        bad += not good
    assert report("metric identities and 7->5 merge commutation (1000 matrices)", bad == 0,
                  f"{1000 - bad}/1000 matrices consistent")
