"""Synthetic two-lead ECG records with labelled beats, written in MIT-BIH layout.

Each beat is a sum of Gaussian waves (P, Q, R, S, T and extra components for
bundle-branch and ventricular shapes) placed around its R time.  Records get
their own morphology jitter, heart rate, baseline wander and noise, and a
class mixture that loosely mimics the DS100 / DS200 halves of MIT-BIH.

The generator exists so the full pipeline (I/O, detection, training,
evaluation, CLI) can run where the real database is not installed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .record_io import SAMPLING_RATE, write_record

# (amplitude mV, offset from R in s, width s) per wave, lead 1 then lead 2
TEMPLATES = {
    "N": (
        [(0.15, -0.20, 0.025), (-0.10, -0.030, 0.008), (1.20, 0.0, 0.010), (-0.25, 0.030, 0.010), (0.30, 0.26, 0.045)],
        [(0.08, -0.20, 0.025), (0.30, -0.005, 0.010), (-0.80, 0.025, 0.012), (0.20, 0.26, 0.045)],
    ),
    "L": (
        [(0.15, -0.22, 0.025), (0.80, -0.015, 0.020), (0.75, 0.030, 0.022), (-0.30, 0.30, 0.050)],
        [(0.08, -0.22, 0.025), (0.10, -0.020, 0.010), (-1.10, 0.035, 0.030), (0.35, 0.30, 0.050)],
    ),
    "R": (
        [(0.15, -0.20, 0.025), (0.90, 0.0, 0.010), (-0.40, 0.040, 0.020), (0.15, 0.26, 0.050)],
        [(0.08, -0.20, 0.025), (0.35, -0.005, 0.010), (-0.30, 0.030, 0.012), (0.80, 0.075, 0.018), (-0.20, 0.28, 0.050)],
    ),
    "S": (
        [(-0.10, -0.15, 0.020), (-0.10, -0.030, 0.008), (1.15, 0.0, 0.010), (-0.25, 0.030, 0.010), (0.28, 0.25, 0.045)],
        [(-0.08, -0.15, 0.020), (0.30, -0.005, 0.010), (-0.80, 0.025, 0.012), (0.20, 0.25, 0.045)],
    ),
    "V": (
        [(-1.40, 0.010, 0.035), (0.40, -0.050, 0.020), (0.70, 0.300, 0.060)],
        [(1.30, 0.015, 0.035), (-0.60, 0.300, 0.060)],
    ),
    "F": (
        [(0.10, -0.20, 0.025), (0.50, 0.0, 0.015), (-0.80, 0.030, 0.030), (0.45, 0.29, 0.055)],
        [(0.05, -0.20, 0.025), (0.80, 0.012, 0.025), (-0.20, 0.28, 0.055)],
    ),
    "Q": (
        [(0.85, 0.0, 0.022), (-0.35, 0.045, 0.015), (0.25, 0.085, 0.020), (0.10, 0.30, 0.060)],
        [(-0.40, 0.010, 0.025), (0.50, 0.070, 0.025), (0.10, 0.30, 0.060)],
    ),
}

SYMBOL = {"N": "N", "L": "L", "R": "R", "S": "A", "V": "V", "F": "F", "Q": "Q"}

# RR multiplier for the interval ending at this beat, and for the next one
PREMATURITY = {"N": (1.0, 1.0), "L": (1.0, 1.0), "R": (1.0, 1.0), "S": (0.68, 1.08),
               "V": (0.62, 1.38), "F": (0.92, 1.05), "Q": (0.95, 1.0)}


@dataclass
class RecordPlan:
    base: str = "N"  # dominant rhythm class: N, L or R
    mix: dict | None = None  # ectopic class -> probability per beat
    heart_rate: float = 72.0
    noise_mv: float = 0.02
    seed: int = 0


def _wave_sum(t: np.ndarray, waves, jitter) -> np.ndarray:
    out = np.zeros_like(t)
    for (amp, off, width), (ja, jo, jw) in zip(waves, jitter):
        out += amp * ja * np.exp(-0.5 * ((t - off * jo) / (width * jw)) ** 2)
    return out


def synth_record(minutes: float, plan: RecordPlan, rate: float = SAMPLING_RATE):
    """Return ``(lead1_mv, lead2_mv, annotations)``; annotations are ``(sample, symbol)``."""
    rng = np.random.default_rng(plan.seed)
    n = int(round(minutes * 60 * rate))
    mix = dict(plan.mix or {})
    jit = {}
    for cls, (w1, w2) in TEMPLATES.items():
        jit[cls] = tuple(
            [(rng.uniform(0.85, 1.15), rng.uniform(0.9, 1.1), rng.uniform(0.85, 1.15)) for _ in w]
            for w in (w1, w2)
        )
    lead_gain = rng.uniform(0.8, 1.2, size=2)
    rr0 = 60.0 / plan.heart_rate
    lead1 = np.zeros(n)
    lead2 = np.zeros(n)
    anns = []
    t_r = rng.uniform(0.2, 0.6) - rr0
    next_factor = 1.0
    half = int(0.7 * rate)
    classes = [plan.base] + list(mix)
    probs = np.array([1.0 - sum(mix.values())] + list(mix.values()))
    while True:
        cls = classes[rng.choice(len(classes), p=probs)]
        pre, post = PREMATURITY[cls]
        resp = 1.0 + 0.04 * np.sin(2 * np.pi * t_r / 4.5)
        rr = rr0 * resp * next_factor * pre * rng.normal(1.0, 0.02)
        t_r += rr
        next_factor = post
        r = int(round(t_r * rate))
        if r + half >= n:
            break
        if r < 0:
            continue
        lo, hi = max(r - half, 0), min(r + half, n)
        tt = (np.arange(lo, hi) - r) / rate
        w1, w2 = TEMPLATES[cls]
        lead1[lo:hi] += lead_gain[0] * _wave_sum(tt, w1, jit[cls][0])
        lead2[lo:hi] += lead_gain[1] * _wave_sum(tt, w2, jit[cls][1])
        anns.append((r, SYMBOL[cls]))
    t = np.arange(n) / rate
    for lead, scale in ((lead1, 1.0), (lead2, 0.7)):
        f = rng.uniform(0.15, 0.35)
        lead += scale * 0.12 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        lead += rng.normal(0.0, plan.noise_mv, size=n)
    return lead1, lead2, anns


def to_adu(mv: np.ndarray, gain: float = 200.0, baseline: int = 1024) -> np.ndarray:
    return np.clip(np.round(mv * gain + baseline), -2048, 2047).astype(np.int16)


# class mixtures loosely shaped after the real records: bundle-branch-block
# records, ectopy-heavy DS200 records, mostly-normal DS100 records
_BASE = {109: "L", 111: "L", 207: "L", 214: "L", 118: "R", 124: "R", 212: "R", 231: "R"}
_MIX_GLOBAL = {"S": 0.03, "V": 0.04, "F": 0.01, "Q": 0.005}
_MIX_PATIENT = {
    200: {"V": 0.25, "S": 0.02, "F": 0.01}, 201: {"S": 0.08, "V": 0.05},
    202: {"S": 0.03, "V": 0.01}, 203: {"V": 0.15, "Q": 0.01}, 205: {"V": 0.03, "F": 0.005},
    207: {"V": 0.08, "S": 0.05}, 208: {"V": 0.25, "F": 0.12, "S": 0.01},
    209: {"S": 0.12}, 210: {"V": 0.08, "F": 0.01}, 212: {"S": 0.001},
    213: {"V": 0.07, "F": 0.11, "S": 0.01}, 214: {"V": 0.08, "F": 0.001},
    215: {"V": 0.05, "S": 0.001}, 219: {"V": 0.03, "F": 0.001}, 220: {"S": 0.05},
    221: {"V": 0.15}, 222: {"S": 0.08}, 223: {"V": 0.18, "S": 0.03, "F": 0.004},
    228: {"V": 0.18, "S": 0.002}, 230: {"V": 0.001}, 231: {"S": 0.001},
    232: {"S": 0.3}, 233: {"V": 0.27, "F": 0.004, "S": 0.002}, 234: {"V": 0.001, "S": 0.002},
}


def plan_for(record_id: int, seed: int = 0) -> RecordPlan:
    mix = _MIX_PATIENT.get(record_id, _MIX_GLOBAL if record_id < 200 else {"V": 0.03, "S": 0.03})
    rng = np.random.default_rng([record_id, seed])
    return RecordPlan(
        base=_BASE.get(record_id, "N"),
        mix=mix,
        heart_rate=float(rng.uniform(60, 95)),
        noise_mv=float(rng.uniform(0.01, 0.03)),
        seed=int(rng.integers(2**31)),
    )


def write_synthetic_database(data_dir, record_ids, minutes: float = 10.0, seed: int = 0,
                             rate: float = SAMPLING_RATE) -> list[int]:
    written = []
    for rid in record_ids:
        l1, l2, anns = synth_record(minutes, plan_for(int(rid), seed), rate)
        write_record(data_dir, int(rid), to_adu(l1), to_adu(l2), anns, rate)
        written.append(int(rid))
    return written
