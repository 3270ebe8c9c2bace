"""R-peak detection (Pan-Tompkins), beat segmentation and RR features.

Detection pipeline, all causal so the same code serves offline and streaming
use::

    band-pass 5-15 Hz (linear-phase FIR, delay D) -> 5-point derivative
    -> squaring -> 150 ms moving-window integration (MWI)
    -> MWI local maxima -> adaptive thresholds, T-wave check, search-back

Threshold bookkeeping follows the 1985 formulation::

    SPKI = 0.125 * PEAKI + 0.875 * SPKI     (0.25 / 0.75 after search-back)
    NPKI = 0.125 * PEAKI + 0.875 * NPKI
    THRESHOLD_I1 = NPKI + 0.25 * (SPKI - NPKI),  THRESHOLD_I2 = 0.5 * THRESHOLD_I1

Offline detection is the streaming detector fed with a single chunk, so the
two paths agree sample for sample.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from ._accel import njit, pick

log = logging.getLogger(__name__)

PRE_R_SECONDS = 0.25
POST_R_SECONDS = 0.45
CONTEXT_BEATS = 5


@dataclass(frozen=True)
class PanTompkinsConfig:
    band_hz: tuple[float, float] = (5.0, 15.0)
    fir_seconds: float = 0.5
    integration_seconds: float = 0.150
    refractory_seconds: float = 0.200
    t_wave_seconds: float = 0.360
    t_wave_slope_ratio: float = 0.5
    searchback_factor: float = 1.66
    learning_seconds: float = 2.0
    peak_confirm_seconds: float = 0.200
    locate_seconds: float = 0.050


def bandpass_fir(rate: float, band=(5.0, 15.0), seconds: float = 0.5) -> np.ndarray:
    """Hamming-windowed sinc band-pass with an odd number of taps."""
    n = int(round(seconds * rate)) | 1
    m = np.arange(n) - (n - 1) / 2
    lo, hi = band[0] / rate, band[1] / rate
    taps = 2 * hi * np.sinc(2 * hi * m) - 2 * lo * np.sinc(2 * lo * m)
    taps *= np.hamming(n)
    # unit gain at the band centre
    f0 = 0.5 * (lo + hi)
    gain = np.abs(np.sum(taps * np.exp(-2j * np.pi * f0 * np.arange(n))))
    return taps / gain


# --------------------------------------------------------------------------
# MWI local-maximum finder; state = [cand_val, cand_idx, armed, prev_val]


def _mwi_peaks_numpy(mwi, offset, confirm, state):
    cand_val, cand_idx, armed, prev = state[0], int(state[1]), state[2] > 0.5, state[3]
    out_idx = []
    out_val = []
    for k in range(mwi.shape[0]):
        v = mwi[k]
        n = offset + k
        if armed:
            if v > cand_val:
                cand_val, cand_idx = v, n
            elif n - cand_idx >= confirm:
                out_idx.append(cand_idx)
                out_val.append(cand_val)
                armed = False
        elif v > prev:
            armed = True
            cand_val, cand_idx = v, n
        prev = v
    new_state = np.array([cand_val, cand_idx, 1.0 if armed else 0.0, prev])
    return np.array(out_idx, dtype=np.int64), np.array(out_val, dtype=np.float64), new_state


@njit
def _mwi_peaks_jit(mwi, offset, confirm, state):
    cand_val = state[0]
    cand_idx = np.int64(state[1])
    armed = state[2] > 0.5
    prev = state[3]
    out_idx = np.empty(mwi.shape[0], dtype=np.int64)
    out_val = np.empty(mwi.shape[0], dtype=np.float64)
    n_out = 0
    for k in range(mwi.shape[0]):
        v = mwi[k]
        n = offset + k
        if armed:
            if v > cand_val:
                cand_val = v
                cand_idx = n
            elif n - cand_idx >= confirm:
                out_idx[n_out] = cand_idx
                out_val[n_out] = cand_val
                n_out += 1
                armed = False
        elif v > prev:
            armed = True
            cand_val = v
            cand_idx = n
        prev = v
    new_state = np.empty(4)
    new_state[0] = cand_val
    new_state[1] = cand_idx
    new_state[2] = 1.0 if armed else 0.0
    new_state[3] = prev
    return out_idx[:n_out].copy(), out_val[:n_out].copy(), new_state


_mwi_peaks = pick(_mwi_peaks_jit, _mwi_peaks_numpy)


@dataclass
class _Candidate:
    mwi_index: int
    value: float
    r_index: int
    slope: float


class PanTompkinsDetector:
    """Incremental Pan-Tompkins detector; feed chunks, collect R peaks."""

    def __init__(self, rate: float, config: PanTompkinsConfig = PanTompkinsConfig()):
        if rate <= 0:
            raise ValueError("sampling rate must be positive")
        self.rate = float(rate)
        self.cfg = config
        self.bp_taps = bandpass_fir(rate, config.band_hz, config.fir_seconds)
        self.delay = (self.bp_taps.size - 1) // 2
        self.der_taps = np.array([2.0, 1.0, 0.0, -1.0, -2.0]) * self.rate / 8.0
        self.win = max(1, int(round(config.integration_seconds * rate)))
        self.mwi_taps = np.full(self.win, 1.0 / self.win)
        # raw-time position of an MWI peak: filter delay + derivative delay + half window
        self.lag = self.delay + 2 + (self.win - 1) // 2
        self.refractory = int(round(config.refractory_seconds * rate))
        self.t_wave = int(round(config.t_wave_seconds * rate))
        self.confirm = int(round(config.peak_confirm_seconds * rate))
        self.locate = int(round(config.locate_seconds * rate))
        self.learning = int(round(config.learning_seconds * rate))

        self._zi_bp = None
        self._zi_der = np.zeros(self.der_taps.size - 1)
        self._zi_mwi = np.zeros(self.win - 1)
        self._peak_state = np.array([-np.inf, 0.0, 0.0, -np.inf])
        self._n = 0
        # short history of band-passed and derivative signals (filter time)
        self._hist_start = 0
        self._bp_hist = np.zeros(0)
        self._der_hist = np.zeros(0)
        self._keep = self.win + self.delay + 2 * self.locate + self.confirm + 16

        self._learn_max = 0.0
        self._learn_sum = 0.0
        self._learn_n = 0
        self._initialised = False
        self._pending: list[_Candidate] = []
        self.spki = 0.0
        self.npki = 0.0
        self._noise_since_qrs: list[_Candidate] = []
        self._last_qrs: _Candidate | None = None
        self._rr_recent: deque = deque(maxlen=8)
        self._rr_selected: deque = deque(maxlen=8)
        self.peaks: list[int] = []

    @property
    def threshold1(self) -> float:
        return self.npki + 0.25 * (self.spki - self.npki)

    @property
    def threshold2(self) -> float:
        return 0.5 * self.threshold1

    @property
    def samples_seen(self) -> int:
        return self._n

    def feed(self, chunk) -> list[int]:
        """Process new samples; returns R peaks confirmed during this call."""
        x = np.asarray(chunk, dtype=np.float64).ravel()
        if x.size == 0:
            return []
        if self._zi_bp is None:
            # steady state for the first sample suppresses the start-up transient
            self._zi_bp = _fir_steady_state(self.bp_taps) * x[0]
        self._last_x = float(x[-1])
        start_peaks = len(self.peaks)
        bp, self._zi_bp = lfilter(self.bp_taps, 1.0, x, zi=self._zi_bp)
        der, self._zi_der = lfilter(self.der_taps, 1.0, bp, zi=self._zi_der)
        mwi, self._zi_mwi = lfilter(self.mwi_taps, 1.0, der * der, zi=self._zi_mwi)
        offset = self._n
        self._n += x.size
        self._bp_hist = np.concatenate([self._bp_hist, bp])
        self._der_hist = np.concatenate([self._der_hist, der])

        if not self._initialised and self._learn_n < self.learning:
            take = mwi[: self.learning - self._learn_n]
            self._learn_max = max(self._learn_max, float(take.max()))
            self._learn_sum += float(take.sum())
            self._learn_n += take.size
        idx, val, self._peak_state = _mwi_peaks(mwi, offset, self.confirm, self._peak_state)
        for i, v in zip(idx.tolist(), val.tolist()):
            self._pending.append(self._candidate(int(i), float(v)))
        if not self._initialised and self._learn_n >= self.learning:
            self._initialise()
        if self._initialised:
            self._drain()
        self._trim()
        return self.peaks[start_peaks:]

    def finish(self) -> list[int]:
        """End of stream: classify anything still pending."""
        start_peaks = len(self.peaks)
        if self._zi_bp is None:
            return []
        n = self._n
        # hold the last value long enough to push every real QRS through the filter delays
        self.feed(np.full(self.lag + self.confirm + self.locate + 1, self._last_x))
        if not self._initialised and self._learn_n > 0:
            self._initialise()
        self._drain()
        while len(self.peaks) > start_peaks and self.peaks[-1] >= n:
            self.peaks.pop()
        return self.peaks[start_peaks:]

    # ------------------------------------------------------------------

    def _candidate(self, mwi_index: int, value: float) -> _Candidate:
        h0 = self._hist_start
        lo = max(mwi_index - self.win + 1, h0)
        der_win = self._der_hist[lo - h0 : mwi_index + 1 - h0]
        slope = float(np.max(np.abs(der_win))) if der_win.size else 0.0
        det = mwi_index - self.lag
        a = max(det - self.locate, 0)
        b = det + self.locate
        s0 = max(a + self.delay, h0)
        seg = self._bp_hist[s0 - h0 : b + self.delay + 1 - h0]
        if seg.size:
            r = s0 - self.delay + int(np.argmax(np.abs(seg)))
        else:
            r = max(det, 0)
        return _Candidate(mwi_index, value, r, slope)

    def _initialise(self):
        self.spki = self._learn_max / 3.0
        self.npki = 0.5 * self._learn_sum / max(self._learn_n, 1)
        self._initialised = True

    def _drain(self):
        pending, self._pending = self._pending, []
        for cand in pending:
            self._classify(cand)

    def _rr_average(self) -> float | None:
        if self._rr_selected:
            return float(np.mean(self._rr_selected))
        if self._rr_recent:
            return float(np.mean(self._rr_recent))
        return None

    def _classify(self, cand: _Candidate):
        last = self._last_qrs
        rr_avg = self._rr_average()
        if last is not None and rr_avg is not None:
            if cand.mwi_index - last.mwi_index > self.cfg.searchback_factor * rr_avg:
                self._searchback()
                last = self._last_qrs
        if last is not None and cand.mwi_index - last.mwi_index < self.refractory:
            return
        if cand.value > self.threshold1:
            if (last is not None and cand.mwi_index - last.mwi_index < self.t_wave
                    and cand.slope < self.cfg.t_wave_slope_ratio * last.slope):
                self._noise(cand)
                return
            self._accept(cand, 0.125)
        else:
            self._noise(cand)

    def _noise(self, cand: _Candidate):
        self.npki = 0.125 * cand.value + 0.875 * self.npki
        self._noise_since_qrs.append(cand)

    def _searchback(self):
        last = self._last_qrs
        thr2 = self.threshold2
        best = None
        for c in self._noise_since_qrs:
            if c.mwi_index - last.mwi_index < self.refractory or c.value <= thr2:
                continue
            if best is None or c.value > best.value:
                best = c
        if best is not None:
            self._noise_since_qrs = [c for c in self._noise_since_qrs if c.mwi_index > best.mwi_index]
            self._accept(best, 0.25)

    def _accept(self, cand: _Candidate, weight: float):
        self.spki = weight * cand.value + (1.0 - weight) * self.spki
        if self.peaks and cand.r_index <= self.peaks[-1]:
            # localisation collapsed onto the previous beat; keep the list monotone
            return
        if self._last_qrs is not None:
            rr = cand.mwi_index - self._last_qrs.mwi_index
            avg2 = self._rr_average()
            self._rr_recent.append(rr)
            if avg2 is None or 0.92 * avg2 <= rr <= 1.16 * avg2:
                self._rr_selected.append(rr)
        self._last_qrs = cand
        self._noise_since_qrs = []
        self.peaks.append(cand.r_index)

    def _trim(self):
        drop = self._bp_hist.size - self._keep
        if drop > 0:
            self._bp_hist = self._bp_hist[drop:]
            self._der_hist = self._der_hist[drop:]
            self._hist_start += drop


def _fir_steady_state(taps: np.ndarray) -> np.ndarray:
    # lfilter state that reproduces a unit-step input already in progress
    return np.cumsum(taps[::-1])[::-1][1:]


def detect_r_peaks(signal, rate: float, config: PanTompkinsConfig = PanTompkinsConfig()) -> np.ndarray:
    """Offline R-peak detection; returns strictly increasing sample indices."""
    if rate <= 0:
        raise ValueError("sampling rate must be positive")
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0 or np.all(x == x[0]):
        return np.zeros(0, dtype=np.int64)
    det = PanTompkinsDetector(rate, config)
    det.feed(x)
    det.finish()
    return np.asarray(det.peaks, dtype=np.int64)


# --------------------------------------------------------------------------
# segmentation and RR features


class SegmentOutOfBounds(ValueError):
    pass


def window_bounds(peak: int, rate: float) -> tuple[int, int]:
    return peak - int(round(PRE_R_SECONDS * rate)), peak + int(round(POST_R_SECONDS * rate))


def segment(signal, peak: int, rate: float) -> np.ndarray:
    """Cut ``[peak - 0.25 s, peak + 0.45 s)`` from the last axis of ``signal``."""
    signal = np.asarray(signal)
    a, b = window_bounds(int(peak), rate)
    if a < 0 or b > signal.shape[-1]:
        raise SegmentOutOfBounds(f"window [{a}, {b}) outside signal of length {signal.shape[-1]}")
    return signal[..., a:b]


def rr_intervals(peaks, rate: float) -> np.ndarray:
    """``RR[k]`` (seconds) is the interval from peak k-1 to peak k; ``RR[0]`` is NaN."""
    peaks = np.asarray(peaks, dtype=np.float64)
    rr = np.full(peaks.size, np.nan)
    rr[1:] = np.diff(peaks) / rate
    return rr


def rr_features(peaks, i: int, train_mean_rr: float, rate: float) -> np.ndarray:
    """``[RR_i, RR_{i+1}, mean(RR_{i-4..i+5}), train_mean_rr]`` in seconds.

    The local mean uses whichever of the ten intervals exist.  Beats without
    both neighbours raise ``ValueError``.
    """
    n = len(peaks)
    if i < 1 or i + 1 >= n:
        raise ValueError(f"beat {i} lacks a previous or next R peak")
    rr = rr_intervals(peaks, rate)
    lo, hi = max(i - 4, 1), min(i + 5, n - 1)
    return np.array([rr[i], rr[i + 1], rr[lo : hi + 1].mean(), float(train_mean_rr)])


@dataclass(frozen=True, eq=False)
class BeatSegment:
    r_index: int
    x_ecg: np.ndarray  # (n_leads, 252) in mV
    rr: np.ndarray  # (4,) seconds
    beat_number: int = -1  # position in the detected peak list

    def __eq__(self, other):
        return (isinstance(other, BeatSegment) and self.r_index == other.r_index
                and np.array_equal(self.x_ecg, other.x_ecg) and np.array_equal(self.rr, other.rr))

    __hash__ = None


@dataclass
class SkipReport:
    no_rr_context: int = 0
    out_of_bounds: int = 0
    reasons: list = field(default_factory=list)


def segment_beats(leads, peaks, rate: float, train_mean_rr: float, report: SkipReport | None = None):
    """Segments and RR features for every usable detected beat."""
    leads = np.atleast_2d(np.asarray(leads, dtype=np.float64))
    beats = []
    for i, p in enumerate(peaks):
        beat = _make_beat(leads, peaks, i, rate, train_mean_rr, 0, report)
        if beat is not None:
            beats.append(beat)
    return beats


def _make_beat(leads, peaks, i, rate, train_mean_rr, offset, report):
    if i < 1 or i + 1 >= len(peaks):
        if report is not None:
            report.no_rr_context += 1
            report.reasons.append((int(peaks[i]), "no RR context"))
        return None
    try:
        a, b = window_bounds(int(peaks[i]), rate)
        if a < offset or b - offset > leads.shape[-1]:
            raise SegmentOutOfBounds(f"window [{a}, {b}) outside available samples")
        x = leads[:, a - offset : b - offset].copy()
    except SegmentOutOfBounds as exc:
        log.debug("skipping beat at %d: %s", peaks[i], exc)
        if report is not None:
            report.out_of_bounds += 1
            report.reasons.append((int(peaks[i]), str(exc)))
        return None
    return BeatSegment(int(peaks[i]), x, rr_features(peaks, i, train_mean_rr, rate), i)


def mean_rr(peaks, rate: float) -> float:
    peaks = np.asarray(peaks)
    if peaks.size < 2:
        raise ValueError("need at least two R peaks for an RR interval")
    return float(np.mean(np.diff(peaks)) / rate)


def segment_record(leads, rate: float, train_mean_rr: float | None = None,
                   config: PanTompkinsConfig = PanTompkinsConfig(), report: SkipReport | None = None):
    """Detect on lead 1 and segment every lead.  Returns ``(peaks, beats)``.

    ``train_mean_rr`` defaults to the record's own mean RR.
    """
    leads = np.atleast_2d(np.asarray(leads, dtype=np.float64))
    peaks = detect_r_peaks(leads[0], rate, config)
    if train_mean_rr is None:
        train_mean_rr = mean_rr(peaks, rate) if peaks.size > 1 else 0.0
    return peaks, segment_beats(leads, peaks, rate, train_mean_rr, report)


class StreamBuffer:
    """FIFO of recent samples and R peaks.

    A beat is emitted once it sits in the middle of the buffer, i.e. when
    ``capacity // 2`` newer peaks have been detected.  ``flush`` emits the
    remaining beats at end of stream with truncated local RR averages.
    """

    def __init__(self, rate: float, train_mean_rr: float, n_leads: int = 1,
                 config: PanTompkinsConfig = PanTompkinsConfig(), capacity: int = 2 * CONTEXT_BEATS + 1):
        self.rate = float(rate)
        self.train_mean_rr = float(train_mean_rr)
        self.n_leads = n_leads
        self.capacity = capacity
        self.future = capacity // 2
        self.detector = PanTompkinsDetector(rate, config)
        self.report = SkipReport()
        self._samples = np.zeros((n_leads, 0))
        self._offset = 0  # global sample index of _samples[:, 0]
        self._peaks: list[int] = []  # global peak number k lives at _peaks[k - _base]
        self._base = 0
        self._next = 0  # next global beat number to emit or skip
        self._pre = int(round(PRE_R_SECONDS * rate))

    @property
    def n_received(self) -> int:
        return self._offset + self._samples.shape[1]

    @property
    def peaks_detected(self) -> int:
        return self._base + len(self._peaks)

    def push(self, sample) -> list[BeatSegment]:
        """Append one multi-lead sample, or a ``(n_leads, k)`` chunk."""
        chunk = np.asarray(sample, dtype=np.float64).reshape(self.n_leads, -1)
        self._samples = np.concatenate([self._samples, chunk], axis=1)
        self._peaks.extend(self.detector.feed(chunk[0]))
        return self._emit(final=False)

    def flush(self) -> list[BeatSegment]:
        self._peaks.extend(self.detector.finish())
        return self._emit(final=True)

    def _emit(self, final: bool) -> list[BeatSegment]:
        out = []
        total = self.peaks_detected
        while self._next < total and (final or self._next + self.future < total):
            i = self._next
            self._next += 1
            if i < 1 or i + 1 >= total:
                self.report.no_rr_context += 1
                continue
            r = self._peaks[i - self._base]
            a, b = window_bounds(r, self.rate)
            if a < self._offset or b > self.n_received:
                self.report.out_of_bounds += 1
                continue
            x = self._samples[:, a - self._offset : b - self._offset].copy()
            lo, hi = max(i - 4, 1), min(i + 5, total - 1)
            ctx = np.asarray(self._peaks[lo - 1 - self._base : hi + 1 - self._base], dtype=np.float64)
            rr_ctx = np.diff(ctx) / self.rate
            rr = np.array([rr_ctx[i - lo], rr_ctx[i + 1 - lo], rr_ctx.mean(), self.train_mean_rr])
            out.append(BeatSegment(r, x, rr, i))
        self._trim()
        return out

    def _trim(self):
        keep_peak = max(self._next - CONTEXT_BEATS - 1, 0)
        if keep_peak > self._base:
            del self._peaks[: keep_peak - self._base]
            self._base = keep_peak
        if not self.detector._initialised:
            return
        det = self.detector
        horizon = self.n_received - det.confirm - det.lag - det.locate - 1
        if self._next < self.peaks_detected:
            horizon = min(horizon, self._peaks[self._next - self._base])
        elif self._peaks:
            horizon = min(horizon, self._peaks[-1] + 1)
        drop = horizon - self._pre - self._offset
        if drop > 0:
            self._samples = self._samples[:, drop:]
            self._offset += drop


def match_peaks(peaks, reference, tolerance: int) -> np.ndarray:
    """One-to-one matching of detected peaks to reference positions.

    Returns, for every peak, the index of its matched reference beat or -1.
    Closest pairs are matched first; a pair only counts within ``tolerance``
    samples.
    """
    peaks = np.asarray(peaks, dtype=np.int64)
    ref = np.asarray(reference, dtype=np.int64)
    out = np.full(peaks.size, -1, dtype=np.int64)
    if peaks.size == 0 or ref.size == 0:
        return out
    pos = np.searchsorted(ref, peaks)
    pi, rj = [], []
    for off in (-1, 0):
        j = pos + off
        ok = (j >= 0) & (j < ref.size)
        pi.append(np.nonzero(ok)[0])
        rj.append(j[ok])
    pi = np.concatenate(pi)
    rj = np.concatenate(rj)
    dist = np.abs(peaks[pi] - ref[rj])
    keep = dist <= tolerance
    pi, rj, dist = pi[keep], rj[keep], dist[keep]
    taken = np.zeros(ref.size, dtype=bool)
    for k in np.lexsort((pi, dist)):
        if out[pi[k]] < 0 and not taken[rj[k]]:
            out[pi[k]] = rj[k]
            taken[rj[k]] = True
    return out
