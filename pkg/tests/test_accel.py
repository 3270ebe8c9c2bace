import os
import subprocess
import sys

import numpy as np
import pytest

from hbe import qrs, rnn, wavelet
from hbe._accel import NUMBA_AVAILABLE
from hbe.rnn import RnnLayer
from hbe.wavelet import WaveletSpec

PROBE = ("from hbe import _accel, qrs, wavelet, rnn; "
         "print(_accel.backend(), qrs._mwi_peaks.__name__, wavelet._analysis.__name__, "
         "rnn._sequence_kernel.__name__)")


@pytest.mark.parametrize("flag,expect", [("1", "numpy"), ("", None)])
def test_env_switch_selects_backend(flag, expect):
    env = dict(os.environ, HBE_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    if expect == "numpy":
        assert out == ["numpy", "_mwi_peaks_numpy", "_analysis_numpy", "_sequence_numpy"]
    else:
        assert out[0] == ("numba" if NUMBA_AVAILABLE else "numpy")


def test_mwi_kernels_agree(rng):
    for _ in range(20):
        mwi = np.abs(rng.normal(size=500)).cumsum() % 7
        state = np.array([0.0, 0.0, 0.0, 0.0])
        a = qrs._mwi_peaks_numpy(mwi, 1000, 15, state.copy())
        b = qrs._mwi_peaks_jit(mwi, 1000, 15, state.copy())
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_mwi_kernels_carry_state(rng):
    mwi = np.convolve(np.abs(rng.normal(size=2000)), np.ones(30), "same")
    whole = qrs._mwi_peaks_jit(mwi, 0, 20, np.zeros(4))[0]
    state = np.zeros(4)
    parts = []
    for s in range(0, mwi.size, 137):
        idx, _, state = qrs._mwi_peaks_numpy(mwi[s:s + 137], s, 20, state)
        parts.append(idx)
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_dwt_kernels_agree(rng):
    for order in (1, 2, 3, 4):
        spec = WaveletSpec(order, 1)
        h, g = spec.lowpass, spec.highpass
        for n in (16, 63, 126, 250):
            x = rng.normal(size=n - n % 2)
            a0, d0 = wavelet._analysis_numpy(x, h, g)
            a1, d1 = wavelet._analysis_1d_jit(x, h, g)
            np.testing.assert_allclose(a0, a1, atol=1e-13)
            np.testing.assert_allclose(d0, d1, atol=1e-13)


@pytest.mark.parametrize("cell", ["simple", "lstm", "peephole", "gru"])
def test_sequence_kernels_agree(cell, rng):
    layer = RnnLayer.init(cell, 5, 6, rng)
    xs = rng.normal(size=(11, 5))
    c0 = rng.uniform(-0.1, 0.1, size=6)
    h0 = rnn.sequence_final_state(layer, xs, c0, use="numpy")
    h1 = rnn.sequence_final_state(layer, xs, c0, use="numba")
    np.testing.assert_allclose(h0, h1, atol=1e-12)
