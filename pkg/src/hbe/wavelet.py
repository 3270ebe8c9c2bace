"""Periodized Daubechies DWT (db1-db4) for per-beat wavelet features.

Convention: for an even-length input ``x`` of length ``n``::

    approx[k] = sum_j h[j] * x[(2k + j) mod n]
    detail[k] = sum_j g[j] * x[(2k + j) mod n],   g[j] = (-1)**j * h[2T-1-j]

Odd inputs are first extended by repeating their last sample, so band lengths
follow ceil(n / 2) at every level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import njit, pick

# Daubechies scaling filters, orthonormal normalisation (sum h = sqrt(2)).
DB_LOWPASS = {
    1: np.array([0.70710678118654752, 0.70710678118654752]),
    2: np.array([
        0.48296291314453414, 0.83651630373780791,
        0.22414386804201338, -0.12940952255126038,
    ]),
    3: np.array([
        0.33267055295008262, 0.80689150931109258, 0.45987750211849157,
        -0.13501102001025459, -0.085441273882026662, 0.035226291885709537,
    ]),
    4: np.array([
        0.23037781330889650, 0.71484657055291565, 0.63088076792985891,
        -0.027983769416859854, -0.18703481171909308, 0.030841381835560764,
        0.032883011666885200, -0.010597401785069032,
    ]),
}


@dataclass(frozen=True)
class WaveletSpec:
    order: int = 2
    levels: int = 4

    def __post_init__(self):
        if self.order not in DB_LOWPASS:
            raise ValueError(f"Daubechies order must be 1..4, got {self.order}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    @property
    def lowpass(self) -> np.ndarray:
        return DB_LOWPASS[self.order]

    @property
    def highpass(self) -> np.ndarray:
        return quadrature_mirror(DB_LOWPASS[self.order])


@dataclass(frozen=True)
class WaveletFeatures:
    x_w: np.ndarray
    band_lengths: tuple[int, ...]  # (A_L, D_L, ..., D_1)


def quadrature_mirror(h: np.ndarray) -> np.ndarray:
    n = h.size
    return np.array([(-1) ** j * h[n - 1 - j] for j in range(n)])


def downsample2(x) -> np.ndarray:
    """Keep the even-indexed samples."""
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ValueError("downsample2 needs at least 2 samples")
    return x[..., ::2]


def _even(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] % 2:
        return np.concatenate([x, x[..., -1:]], axis=-1)
    return x


def _analysis_numpy(x, h, g):
    n = x.shape[-1]
    half = n // 2
    idx = (2 * np.arange(half)[:, None] + np.arange(h.size)[None, :]) % n
    frames = x[..., idx]
    return frames @ h, frames @ g


@njit
def _analysis_jit(x, h, g):
    n = x.shape[0]
    half = n // 2
    m = h.shape[0]
    a = np.zeros(half)
    d = np.zeros(half)
    for k in range(half):
        sa = 0.0
        sd = 0.0
        for j in range(m):
            v = x[(2 * k + j) % n]
            sa += h[j] * v
            sd += g[j] * v
        a[k] = sa
        d[k] = sd
    return a, d


def _analysis_1d_jit(x, h, g):
    if x.ndim != 1:
        return _analysis_numpy(x, h, g)
    return _analysis_jit(np.ascontiguousarray(x, dtype=np.float64), h, g)


_analysis = pick(_analysis_1d_jit, _analysis_numpy)


def dwt_level(x, spec: WaveletSpec = WaveletSpec()):
    """One analysis level; returns ``(approx, detail)`` each of length ceil(n/2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("dwt_level needs at least 2 samples")
    return _analysis(_even(x), spec.lowpass, spec.highpass)


def idwt_level(approx, detail, spec: WaveletSpec = WaveletSpec(), length: int | None = None):
    """Inverse of :func:`dwt_level`; ``length`` trims the odd-length extension."""
    a = np.asarray(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    h, g = spec.lowpass, spec.highpass
    half = a.shape[-1]
    n = 2 * half
    out = np.zeros(a.shape[:-1] + (n,))
    for j in range(h.size):
        pos = (2 * np.arange(half) + j) % n
        # positions may repeat when the filter wraps more than once
        np.add.at(out, (..., pos), h[j] * a + g[j] * d)
    if length is not None:
        out = out[..., :length]
    return out


def wavedec(x, spec: WaveletSpec = WaveletSpec()) -> list[np.ndarray]:
    """Multilevel decomposition, returned as ``[A_L, D_L, ..., D_1]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2 ** spec.levels:
        raise ValueError(f"input of length {x.shape[-1]} too short for {spec.levels} levels")
    details = []
    a = x
    for _ in range(spec.levels):
        a, d = dwt_level(a, spec)
        details.append(d)
    return [a] + details[::-1]


def waverec(coeffs, spec: WaveletSpec = WaveletSpec(), length: int | None = None) -> np.ndarray:
    """Inverse of :func:`wavedec`; ``length`` is the original input length."""
    n = length
    lengths = []
    for _ in range(len(coeffs) - 1):
        lengths.append(n)
        n = None if n is None else (n + 1) // 2
    a = coeffs[0]
    for d, target in zip(coeffs[1:], lengths[::-1]):
        a = idwt_level(a[..., : d.shape[-1]], d, spec, length=target)
    return a


def band_lengths(n: int, levels: int) -> tuple[int, ...]:
    lens = []
    for _ in range(levels):
        n = (n + 1) // 2
        lens.append(n)
    return (lens[-1],) + tuple(lens[::-1])


def wavelet_features(x, spec: WaveletSpec = WaveletSpec()) -> WaveletFeatures:
    """Concatenate ``(A_L, D_L, ..., D_1)``; works on 1-D or batched input."""
    coeffs = wavedec(x, spec)
    return WaveletFeatures(np.concatenate(coeffs, axis=-1), tuple(c.shape[-1] for c in coeffs))


def wavelet_cost(n: float, order: int, levels: int) -> float:
    """Analytic multiply count: n * T * (1 + 1/2 + ... + 1/2**(L-1))."""
    return n * order * sum(0.5 ** k for k in range(levels))


def dwt_multiply_count(n: int, order: int, levels: int) -> int:
    """Multiplies actually issued by :func:`wavedec` (both filters, all levels)."""
    taps = 2 * order
    total = 0
    for _ in range(levels):
        half = (n + 1) // 2
        total += 2 * half * taps
        n = half
    return total
