"""Numba vs numpy timings for the three hot kernels and the full per-beat path.

    python benchmarks/bench_kernels.py [--repeat 200]

Both variants are imported directly, so HBE_DISABLE_NUMBA does not matter
here.  Compilation happens in an untimed warm-up call.
"""

import argparse
import time

import numpy as np

from hbe import qrs, rnn, wavelet
from hbe.models import (ArchSpec, BlendMlp, ModelAlpha, ModelBeta, ModelBundle, Scaler, beta_vector,
                        classify_beat, extract_features)
from hbe.qrs import BeatSegment
from hbe.rnn import pca_fit


def timeit(fn, repeat):
    fn()
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return np.median(t) * 1e6


def toy_bundle(rng):
    arch = ArchSpec()
    beats = [BeatSegment(1000 + k, rng.normal(size=(2, 252)), rng.uniform(0.5, 1.2, 4), k) for k in range(200)]
    raw = extract_features(beats, arch)
    scaler = Scaler.fit(raw)
    pca = pca_fit(beta_vector(scaler.apply(raw)), arch.pca_k)
    b = ModelBundle(arch, ModelAlpha.init(arch, rng), ModelBeta.init(arch, rng, pca=pca),
                    BlendMlp.init(arch.blend_hidden, rng), scaler, (1,) * 7)
    return b.astype(np.float32), beats[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []

    x = rng.normal(size=126)
    spec = wavelet.WaveletSpec(2, 4)
    h, g = spec.lowpass, spec.highpass
    xe = np.concatenate([x, x[-1:]])
    rows.append(("dwt level, n=126", timeit(lambda: wavelet._analysis_1d_jit(xe, h, g), args.repeat),
                 timeit(lambda: wavelet._analysis_numpy(xe, h, g), args.repeat)))

    mwi = np.abs(rng.normal(size=36000)).cumsum() % 7.0
    st = np.zeros(4)
    rows.append(("MWI peak finder, 100 s", timeit(lambda: qrs._mwi_peaks_jit(mwi, 0, 72, st), 20),
                 timeit(lambda: qrs._mwi_peaks_numpy(mwi, 0, 72, st), 20)))

    layer = rnn.RnnLayer.init("lstm", 18, 30, rng).astype(np.float32)
    xs = rng.normal(size=(29, 18)).astype(np.float32)
    rows.append(("lstm 30, 29 steps", timeit(lambda: rnn.sequence_final_state(layer, xs, use="numba"), args.repeat),
                 timeit(lambda: rnn.sequence_final_state(layer, xs, use="numpy"), args.repeat)))

    bundle, beat = toy_bundle(rng)
    rows.append(("classify_beat (default arch)", timeit(lambda: classify_beat(bundle, beat, use="numba"), args.repeat),
                 timeit(lambda: classify_beat(bundle, beat, use="numpy"), args.repeat)))

    print(f"{'kernel':32s} {'numba us':>10s} {'numpy us':>10s} {'speed-up':>9s}")
    for name, a, b in rows:
        print(f"{name:32s} {a:10.1f} {b:10.1f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
