"""MIT-BIH record loading: format-212 signals, headers, annotation tables.

Files per record, all in one directory::

    <rec>.dat      format 212, two channels interleaved
    <rec>.hea      WFDB header (record line + one line per signal)
    <rec>.ann.txt  beat annotations, one ``<sample> <symbol>`` per line

The annotation reader also accepts the column layout printed by ``rdann``
(``time sample symbol sub chan num``).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SAMPLING_RATE = 360
DEFAULT_GAIN = 200.0
DEFAULT_BASELINE = 1024

CLASSES = ("N", "L", "R", "S", "V", "F", "Q")
CLASSES_5 = ("N", "S", "V", "F", "Q")
N_CLASSES = len(CLASSES)

SYMBOL_TO_CLASS = {
    "N": "N", "e": "N", "j": "N",
    "L": "L",
    "R": "R",
    "A": "S", "a": "S", "J": "S", "S": "S",
    "V": "V", "E": "V",
    "F": "F",
    "f": "Q", "Q": "Q", "/": "Q",
}

# rhythm, signal-quality and comment marks that are not heartbeats
NON_BEAT_SYMBOLS = frozenset(
    ["[", "]", "!", "x", "(", ")", "p", "t", "u", "`", "'", "^", "|", "~", "+", "s", "T", "*", "D", "=", '"', "@"]
)

EXCLUDED_RECORDS = frozenset({102, 104, 107, 217})

MITDB_RECORDS = (
    100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 111, 112, 113, 114, 115,
    116, 117, 118, 119, 121, 122, 123, 124, 200, 201, 202, 203, 205, 207, 208,
    209, 210, 212, 213, 214, 215, 217, 219, 220, 221, 222, 223, 228, 230, 231,
    232, 233, 234,
)


class RecordFormatError(ValueError):
    """Malformed signal, header or annotation data."""


class ExcludedRecordError(ValueError):
    """A paced record was requested for training or testing."""


def class_index(label: str) -> int:
    return CLASSES.index(label)


def to_5class(label: str) -> str:
    return "N" if label in ("L", "R") else label


def map_symbol(symbol: str) -> str:
    """Map an MIT-BIH beat symbol to one of the seven beat classes."""
    try:
        return SYMBOL_TO_CLASS[symbol]
    except KeyError:
        raise RecordFormatError(f"not a beat annotation symbol: {symbol!r}") from None


# --------------------------------------------------------------------------
# format 212

def parse_signal_212(data: bytes, n_channels: int = 2) -> np.ndarray:
    """Decode format-212 bytes into an ``(n_channels, n_samples)`` int16 array.

    Every 3 bytes hold two 12-bit two's complement samples::

        s1 = b0 | (b1 & 0x0F) << 8
        s2 = b2 | (b1 & 0xF0) << 4
    """
    if n_channels != 2:
        raise RecordFormatError(f"format 212 reader supports 2 channels, got {n_channels}")
    buf = np.frombuffer(data, dtype=np.uint8)
    n_trip = buf.size // 3
    if buf.size % 3:
        raise RecordFormatError(
            f"truncated format-212 buffer: {buf.size % 3} dangling byte(s) at offset {3 * n_trip}"
        )
    trip = buf.reshape(n_trip, 3).astype(np.int16)
    s1 = trip[:, 0] | ((trip[:, 1] & 0x0F) << 8)
    s2 = trip[:, 2] | ((trip[:, 1] & 0xF0) << 4)
    samples = np.empty(2 * n_trip, dtype=np.int16)
    samples[0::2] = s1
    samples[1::2] = s2
    samples[samples > 2047] -= 4096
    return samples.reshape(-1, n_channels).T.copy()


def encode_signal_212(channels: np.ndarray) -> bytes:
    """Inverse of :func:`parse_signal_212`; values must fit in 12 bits signed."""
    channels = np.asarray(channels)
    if channels.ndim != 2 or channels.shape[0] != 2:
        raise ValueError("expected a (2, n_samples) array")
    if channels.min(initial=0) < -2048 or channels.max(initial=0) > 2047:
        raise ValueError("sample out of 12-bit range")
    flat = (channels.T.reshape(-1).astype(np.int32) & 0xFFF).astype(np.uint16)
    s1 = flat[0::2]
    s2 = flat[1::2]
    out = np.empty((s1.size, 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
    out[:, 2] = s2 & 0xFF
    return out.tobytes()


# --------------------------------------------------------------------------
# header

@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    n_signals: int
    sampling_rate: float
    n_samples: int | None
    file_names: tuple[str, ...]
    formats: tuple[str, ...]
    gains: tuple[float, ...]
    baselines: tuple[int, ...]
    descriptions: tuple[str, ...]


_GAIN_RE = re.compile(r"^([-+0-9.eE]+)(?:\((-?\d+)\))?(?:/(\S+))?$")


def parse_header(text: str) -> RecordHeader:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise RecordFormatError("empty header")
    rec = lines[0].split()
    if len(rec) < 2:
        raise RecordFormatError(f"bad record line: {lines[0]!r}")
    name = rec[0].split("/")[0]
    n_sig = int(rec[1])
    fs = float(rec[2].split("/")[0]) if len(rec) > 2 else float(SAMPLING_RATE)
    n_samples = int(rec[3]) if len(rec) > 3 else None
    if len(lines) < 1 + n_sig:
        raise RecordFormatError(f"header declares {n_sig} signals but lists {len(lines) - 1}")
    files, fmts, gains, bases, descs = [], [], [], [], []
    for ln in lines[1 : 1 + n_sig]:
        tok = ln.split()
        files.append(tok[0])
        fmts.append(tok[1].split("x")[0].split(":")[0].split("+")[0] if len(tok) > 1 else "212")
        gain, base = DEFAULT_GAIN, None
        if len(tok) > 2:
            m = _GAIN_RE.match(tok[2])
            if m is None:
                raise RecordFormatError(f"bad gain field: {tok[2]!r}")
            gain = float(m.group(1)) or DEFAULT_GAIN
            if m.group(2) is not None:
                base = int(m.group(2))
        adc_zero = int(tok[4]) if len(tok) > 4 else DEFAULT_BASELINE
        bases.append(adc_zero if base is None else base)
        gains.append(gain)
        descs.append(" ".join(tok[8:]) if len(tok) > 8 else "")
    return RecordHeader(name, n_sig, fs, n_samples, tuple(files), tuple(fmts),
                        tuple(gains), tuple(bases), tuple(descs))


def format_header(record_name: str, n_samples: int, sampling_rate: float = SAMPLING_RATE,
                  gains=(DEFAULT_GAIN, DEFAULT_GAIN), baselines=(DEFAULT_BASELINE, DEFAULT_BASELINE),
                  descriptions=("MLII", "V1")) -> str:
    lines = [f"{record_name} 2 {sampling_rate:g} {n_samples}"]
    for g, b, d in zip(gains, baselines, descriptions):
        lines.append(f"{record_name}.dat 212 {g:g} 11 {b} 0 0 0 {d}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# annotations

def load_annotations(text: str) -> list[tuple[int, str]]:
    """Parse an annotation table; keep beat annotations only.

    Lines are ``<sample> <symbol>`` or the ``rdann`` layout where a
    ``m:ss.mmm`` time column precedes the sample number.  A header line
    starting with a non-numeric token is skipped.
    """
    out: list[tuple[int, str]] = []
    prev = -1
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        if ":" in tok[0] or tok[0].startswith("["):
            tok = tok[1:]
        if len(tok) < 2 or not tok[0].lstrip("-").isdigit():
            if lineno == 1:
                continue
            raise RecordFormatError(f"line {lineno}: cannot parse {raw!r}")
        idx, sym = int(tok[0]), tok[1]
        if idx < prev:
            raise RecordFormatError(f"line {lineno}: sample index {idx} after {prev} (unsorted)")
        prev = idx
        if sym in NON_BEAT_SYMBOLS:
            continue
        if sym not in SYMBOL_TO_CLASS:
            raise RecordFormatError(f"line {lineno}: unknown beat symbol {sym!r}")
        if out and idx <= out[-1][0]:
            raise RecordFormatError(f"line {lineno}: duplicate beat at sample {idx}")
        out.append((idx, sym))
    return out


def format_annotations(annotations) -> str:
    return "".join(f"{i} {s}\n" for i, s in annotations)


# --------------------------------------------------------------------------
# records

@dataclass(frozen=True, eq=False)
class EcgRecord:
    record_id: int
    sampling_rate: float
    lead1: np.ndarray
    lead2: np.ndarray
    annotations: tuple[tuple[int, str], ...]
    gains: tuple[float, float] = (DEFAULT_GAIN, DEFAULT_GAIN)
    baselines: tuple[int, int] = (DEFAULT_BASELINE, DEFAULT_BASELINE)

    def __post_init__(self):
        if self.sampling_rate <= 0:
            raise RecordFormatError("sampling_rate must be positive")
        if self.lead1.shape != self.lead2.shape:
            raise RecordFormatError("leads differ in length")
        n = self.lead1.shape[0]
        last = -1
        for idx, sym in self.annotations:
            if idx <= last or idx >= n:
                raise RecordFormatError(f"record {self.record_id}: bad annotation index {idx}")
            last = idx
        self.lead1.setflags(write=False)
        self.lead2.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return int(self.lead1.shape[0])

    def millivolts(self, lead: int = 1) -> np.ndarray:
        adu = self.lead1 if lead == 1 else self.lead2
        g, b = self.gains[lead - 1], self.baselines[lead - 1]
        return (adu.astype(np.float64) - b) / g

    def beat_positions(self) -> np.ndarray:
        return np.array([i for i, _ in self.annotations], dtype=np.int64)

    def beat_labels(self) -> list[str]:
        return [map_symbol(s) for _, s in self.annotations]


def load_record(data_dir, record_id: int) -> EcgRecord:
    data_dir = Path(data_dir)
    stem = data_dir / str(record_id)
    try:
        header = parse_header(stem.with_suffix(".hea").read_text())
        raw = stem.with_suffix(".dat").read_bytes()
        ann_text = (data_dir / f"{record_id}.ann.txt").read_text()
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"record {record_id}: missing {exc.filename}") from None
    if header.n_signals != 2 or any(f != "212" for f in header.formats):
        raise RecordFormatError(f"record {record_id}: only 2-channel format 212 is supported")
    sig = parse_signal_212(raw, 2)
    if header.n_samples is not None and header.n_samples != sig.shape[1]:
        log.warning("record %s: header says %d samples, file holds %d",
                    record_id, header.n_samples, sig.shape[1])
    anns = load_annotations(ann_text)
    return EcgRecord(
        record_id=int(record_id),
        sampling_rate=header.sampling_rate,
        lead1=sig[0],
        lead2=sig[1],
        annotations=tuple(anns),
        gains=(header.gains[0], header.gains[1]),
        baselines=(header.baselines[0], header.baselines[1]),
    )


def write_record(data_dir, record_id: int, lead1_adu, lead2_adu, annotations,
                 sampling_rate: float = SAMPLING_RATE) -> None:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    sig = np.vstack([np.asarray(lead1_adu), np.asarray(lead2_adu)])
    (data_dir / f"{record_id}.dat").write_bytes(encode_signal_212(sig))
    (data_dir / f"{record_id}.hea").write_text(format_header(str(record_id), sig.shape[1], sampling_rate))
    (data_dir / f"{record_id}.ann.txt").write_text(format_annotations(annotations))


def available_records(data_dir) -> list[int]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        return []
    ids = []
    for p in data_dir.glob("*.hea"):
        if p.stem.isdigit() and (data_dir / f"{p.stem}.dat").exists():
            ids.append(int(p.stem))
    return sorted(ids)


# --------------------------------------------------------------------------
# dataset partition

@dataclass(frozen=True)
class DatasetSplit:
    global_records: tuple[int, ...]
    patient_records: tuple[int, ...]
    excluded: frozenset = field(default=EXCLUDED_RECORDS)

    def __post_init__(self):
        overlap = self.excluded & (set(self.global_records) | set(self.patient_records))
        if overlap:
            raise ValueError(f"excluded records in split: {sorted(overlap)}")

    def require_usable(self, record_id: int) -> None:
        if record_id in self.excluded:
            raise ExcludedRecordError(f"record {record_id} contains paced beats and is excluded")


def partition_dataset(all_records=MITDB_RECORDS) -> DatasetSplit:
    ids = sorted(set(int(r) for r in all_records))
    glob = tuple(r for r in ids if 100 <= r <= 124 and r not in EXCLUDED_RECORDS)
    pat = tuple(r for r in ids if 200 <= r <= 234 and r not in EXCLUDED_RECORDS)
    return DatasetSplit(glob, pat)
