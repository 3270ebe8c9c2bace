"""Patient-specific training: data assembly, BPTT + Adam, blend MLP, grid search.

A patient's train set is the beats of the first ``minutes`` of their record
(local data) plus a class-stratified sample of DS100 beats (global data).
Everything after the cutoff is test data and never enters training.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .models import (
    ArchSpec,
    BlendMlp,
    ModelAlpha,
    ModelBeta,
    ModelBundle,
    Scaler,
    alpha_forward,
    alpha_sequences,
    beta_forward,
    beta_sequences,
    beta_vector,
    extract_features,
    predict,
)
from .qrs import detect_r_peaks, match_peaks, mean_rr, segment_beats, window_bounds
from .record_io import CLASSES, N_CLASSES, DatasetSplit, EcgRecord, class_index, load_record
from .rnn import CELL_TYPES, cell_cost, layer_backward, layer_forward, pca_fit, softmax

log = logging.getLogger(__name__)

V_INDEX = CLASSES.index("V")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None, epoch=None, beat=None):
        super().__init__(message)
        self.checkpoint = checkpoint  # parameter copies from the last finite epoch
        self.epoch = epoch
        self.beat = beat


@dataclass(frozen=True)
class GridSpec:
    cell_types: tuple[str, ...] = CELL_TYPES
    n_layers: tuple[int, ...] = (1, 2)
    # (alpha branch 1, alpha branch 2, beta) hidden sizes
    hidden: tuple[tuple[int, int, int], ...] = ((10, 10, 20), (30, 30, 50), (50, 50, 100), (100, 100, 200))

    def configs(self, base: ArchSpec) -> list[ArchSpec]:
        out = []
        for cell, nl, (h1, h2, hb) in product(self.cell_types, self.n_layers, self.hidden):
            out.append(replace(base, cell_type=cell, n_layers=nl,
                               hidden_alpha1=h1, hidden_alpha2=h2, hidden_beta=hb))
        if not out:
            raise ValueError("empty hyper-parameter grid")
        return out


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    blend_epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    minutes: float = 5.0
    global_per_class: int = 200
    c_init: float = 0.1  # c ~ U(-c_init, c_init) at every batch start
    val_fraction: float = 0.2
    match_tolerance_s: float = 0.05
    arch: ArchSpec = field(default_factory=ArchSpec)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.minutes not in (2.5, 5.0):
            raise ValueError(f"minutes must be 2.5 or 5, got {self.minutes}")
        if self.batch_size < 1 or self.epochs < 0 or self.blend_epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")

    def cutoff(self, rate: float) -> int:
        return int(round(self.minutes * 60 * rate))


# --------------------------------------------------------------------------
# data assembly


@dataclass
class LabelledRecord:
    """Detected peaks of one record with annotation labels (-1 = no match)."""

    record: EcgRecord
    peaks: np.ndarray
    labels: np.ndarray
    matches: np.ndarray  # annotation index matched by each peak, -1 for none
    unmatched_annotations: np.ndarray  # annotation indices no detection matched

    @property
    def rate(self) -> float:
        return self.record.sampling_rate


def label_record(record: EcgRecord, tolerance_s: float = 0.05) -> LabelledRecord:
    lead1 = record.millivolts(1)
    peaks = detect_r_peaks(lead1, record.sampling_rate)
    ann_pos = record.beat_positions()
    ann_lab = np.array([class_index(c) for c in record.beat_labels()], dtype=np.int64)
    m = match_peaks(peaks, ann_pos, int(round(tolerance_s * record.sampling_rate)))
    labels = np.where(m >= 0, ann_lab[np.maximum(m, 0)] if ann_lab.size else -1, -1)
    matched = np.zeros(ann_pos.size, bool)
    matched[m[m >= 0]] = True
    return LabelledRecord(record, peaks, labels, m, np.nonzero(~matched)[0])


def _leads(record: EcgRecord) -> np.ndarray:
    return np.vstack([record.millivolts(1), record.millivolts(2)])


def _beats_at(lr: LabelledRecord, train_mean_rr: float, select) -> tuple[list, np.ndarray]:
    """Segment the detected beats whose position in ``lr.peaks`` is in ``select``."""
    select = set(int(i) for i in select)
    beats = [b for b in segment_beats(_leads(lr.record), lr.peaks, lr.rate, train_mean_rr)
             if b.beat_number in select]
    labels = np.array([lr.labels[b.beat_number] for b in beats], dtype=np.int64)
    return beats, labels


def local_mean_rr(lr: LabelledRecord, cutoff: int) -> float:
    return mean_rr(lr.peaks[lr.peaks < cutoff], lr.rate)


@dataclass
class GlobalPool:
    """Labelled DS100 records from which the stratified global sample is drawn."""

    records: dict[int, LabelledRecord]
    minutes: float

    def entries(self, exclude=()):
        """``(record_id, beat_number, label)`` for every labelled, segmentable beat."""
        out = []
        for rid, lr in sorted(self.records.items()):
            if rid in exclude:
                continue
            n = lr.peaks.size
            for k in range(1, n - 1):
                a, b = window_bounds(int(lr.peaks[k]), lr.rate)
                if lr.labels[k] >= 0 and a >= 0 and b <= lr.record.n_samples:
                    out.append((rid, k, int(lr.labels[k])))
        return out

    def sample(self, per_class: int, seed: int, exclude=()):
        """Uniform per-class sample; returns ``(beats, labels, sources, missing_classes)``.

        Records in ``exclude`` (a DS100 patient's own record) are left out.
        """
        rng = np.random.default_rng([seed, 100])
        entries = self.entries(exclude)
        by_class = {c: [e for e in entries if e[2] == c] for c in range(N_CLASSES)}
        chosen = []
        missing = []
        for c in range(N_CLASSES):
            pool = by_class[c]
            if not pool:
                missing.append(CLASSES[c])
                continue
            idx = rng.choice(len(pool), size=min(per_class, len(pool)), replace=False)
            chosen.extend(pool[i] for i in sorted(idx))
        beats, labels, sources = [], [], []
        for rid in sorted({e[0] for e in chosen}):
            lr = self.records[rid]
            want = [e[1] for e in chosen if e[0] == rid]
            cutoff = int(round(self.minutes * 60 * lr.rate))
            b, lab = _beats_at(lr, local_mean_rr(lr, cutoff), want)
            beats.extend(b)
            labels.extend(lab.tolist())
            sources.extend([rid] * len(b))
        return beats, np.array(labels, dtype=np.int64), np.array(sources, dtype=np.int64), missing


def build_global_pool(data_dir, split: DatasetSplit, minutes: float = 5.0,
                      tolerance_s: float = 0.05, records=None) -> GlobalPool:
    ids = split.global_records if records is None else records
    out = {}
    for rid in ids:
        if rid not in split.global_records:
            raise ValueError(f"record {rid} is not a DS100 record")
        try:
            out[rid] = label_record(load_record(data_dir, rid), tolerance_s)
        except FileNotFoundError:
            log.warning("global record %s not found in %s, skipping", rid, data_dir)
    if not out:
        raise FileNotFoundError(f"no DS100 records found in {data_dir}")
    return GlobalPool(out, minutes)


@dataclass
class TrainSet:
    beats: list
    labels: np.ndarray
    provenance: np.ndarray  # "local" | "global"
    sources: np.ndarray  # record id of every beat
    record_id: int
    cutoff: int
    train_mean_rr: float
    missing_classes: list = field(default_factory=list)

    def __len__(self):
        return len(self.beats)

    def counts(self) -> dict:
        out = {}
        for prov in ("local", "global"):
            sel = self.provenance == prov
            out[prov] = {CLASSES[c]: int(np.sum(self.labels[sel] == c)) for c in range(N_CLASSES)}
        return out

    def subset(self, idx) -> "TrainSet":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, beats=[self.beats[i] for i in idx], labels=self.labels[idx],
                       provenance=self.provenance[idx], sources=self.sources[idx])


def assemble_train_set(patient: LabelledRecord, pool: GlobalPool, split: DatasetSplit,
                       cfg: TrainConfig) -> TrainSet:
    rid = patient.record.record_id
    split.require_usable(rid)
    if rid not in split.patient_records and rid not in split.global_records:
        raise ValueError(f"record {rid} is in neither DS100 nor DS200")
    cutoff = cfg.cutoff(patient.rate)
    local_idx = [k for k in range(patient.peaks.size) if patient.peaks[k] < cutoff and patient.labels[k] >= 0]
    if sum(1 for k in local_idx if 0 < k < patient.peaks.size - 1) == 0:
        raise ValueError(f"record {rid}: no labelled beats in the first {cfg.minutes} minutes")
    rr = local_mean_rr(patient, cutoff)
    lbeats, llab = _beats_at(patient, rr, local_idx)
    gbeats, glab, gsrc, missing = pool.sample(cfg.global_per_class, cfg.seed, exclude=(rid,))
    if missing:
        log.info("classes absent from the global pool: %s", ",".join(missing))
    return TrainSet(
        beats=lbeats + gbeats,
        labels=np.concatenate([llab, glab]).astype(np.int64),
        provenance=np.array(["local"] * len(lbeats) + ["global"] * len(gbeats)),
        sources=np.concatenate([np.full(len(lbeats), rid), gsrc]).astype(np.int64),
        record_id=rid,
        cutoff=cutoff,
        train_mean_rr=rr,
        missing_classes=missing,
    )


def beats_after(patient: LabelledRecord, train_mean_rr: float, start: int):
    """Detected beats with R at or after sample ``start``; labels are -1 for false detections."""
    return _beats_at(patient, train_mean_rr, np.nonzero(patient.peaks >= start)[0])


def held_out_beats(patient: LabelledRecord, cfg: TrainConfig, train_mean_rr: float):
    return beats_after(patient, train_mean_rr, cfg.cutoff(patient.rate))


# --------------------------------------------------------------------------
# parameters, BPTT and Adam


def model_params(model) -> dict[str, np.ndarray]:
    """Named views of every trainable array (updated in place by Adam)."""
    out = {}

    def add_layers(prefix, layers):
        for k, layer in enumerate(layers):
            for n, a in layer.params().items():
                out[f"{prefix}.{k}.{n}"] = a

    if isinstance(model, ModelAlpha):
        add_layers("branch1", model.branch1)
        add_layers("branch2", model.branch2 or [])
        head = model.head
    elif isinstance(model, ModelBeta):
        add_layers("layers", model.layers)
        head = model.head
    elif isinstance(model, BlendMlp):
        for k, d in enumerate(model.layers):
            out[f"dense.{k}.weight"] = d.weight
            out[f"dense.{k}.bias"] = d.bias
        return out
    else:
        raise TypeError(f"not a trainable model: {type(model).__name__}")
    out["head.weight"] = head.weight
    out["head.bias"] = head.bias
    return out


def _branches(model):
    if isinstance(model, ModelAlpha):
        return [("branch1", model.branch1)] + ([("branch2", model.branch2)] if model.branch2 else [])
    return [("layers", model.layers)]


def sample_c0(model, rng: np.random.Generator, scale: float):
    """One random initial ``c`` per layer, shared by every sequence of the batch."""
    return [[rng.uniform(-scale, scale, size=l.n_hidden) for l in layers] for _, layers in _branches(model)]


def zero_c0(model):
    return [[np.zeros(l.n_hidden) for l in layers] for _, layers in _branches(model)]


def _stack_fwd(layers, xs, c0s):
    caches = []
    seq = xs
    for layer, c0 in zip(layers, c0s):
        seq, cache = layer_forward(layer, seq, c0=c0, return_cache=True)
        caches.append(cache)
    return seq[:, -1], caches, seq.shape[1]


def _stack_bwd(layers, caches, steps, dh_last, prefix, grads):
    dhs = np.zeros((dh_last.shape[0], steps, layers[-1].n_hidden))
    dhs[:, -1] = dh_last
    for k in range(len(layers) - 1, -1, -1):
        g, dxs, _, _ = layer_backward(layers[k], caches[k], dhs)
        for n, a in g.items():
            grads[f"{prefix}.{k}.{n}"] = a
        dhs = dxs


def bptt_gradients(model, seqs, labels, c0s):
    """Cross-entropy loss and batch-mean gradients for alpha or beta.

    ``seqs`` holds one ``(B, T, Nx)`` array per branch.  Returns
    ``(mean_loss, grads, per_beat_loss)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    bsz = labels.size
    if bsz == 0:
        raise ValueError("empty batch")
    branches = _branches(model)
    if len(seqs) != len(branches):
        raise ValueError(f"model has {len(branches)} branches, got {len(seqs)} input sequences")
    feats, state = [], []
    for (prefix, layers), xs, c0 in zip(branches, seqs, c0s):
        h, caches, steps = _stack_fwd(layers, xs, c0)
        feats.append(h)
        state.append((prefix, layers, caches, steps, h.shape[1]))
    f = np.concatenate(feats, axis=1)
    p = softmax(model.head(f))
    per_beat = -np.log(np.maximum(p[np.arange(bsz), labels], 1e-300))
    bad = np.nonzero(~np.isfinite(per_beat) | ~np.all(np.isfinite(p), axis=1))[0]
    if bad.size:
        raise TrainingDiverged(f"non-finite loss at batch beat {int(bad[0])}", beat=int(bad[0]))
    dlog = p.copy()
    dlog[np.arange(bsz), labels] -= 1.0
    dlog /= bsz
    grads = {"head.weight": dlog.T @ f, "head.bias": dlog.sum(0)}
    df = dlog @ model.head.weight
    col = 0
    for prefix, layers, caches, steps, nh in state:
        _stack_bwd(layers, caches, steps, df[:, col : col + nh], prefix, grads)
        col += nh
    return float(per_beat.mean()), grads, per_beat


def blend_gradients(blend: BlendMlp, x, labels):
    """Loss and batch-mean gradients of the blend MLP on inputs ``x = p_a || p_b``."""
    labels = np.asarray(labels, dtype=np.int64)
    bsz = labels.size
    acts = [x]
    pre = []
    for layer in blend.layers[:-1]:
        z = layer(acts[-1])
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    p = softmax(blend.layers[-1](acts[-1]))
    per_beat = -np.log(np.maximum(p[np.arange(bsz), labels], 1e-300))
    if not np.all(np.isfinite(per_beat)):
        k = int(np.nonzero(~np.isfinite(per_beat))[0][0])
        raise TrainingDiverged(f"non-finite blend loss at batch beat {k}", beat=k)
    d = p.copy()
    d[np.arange(bsz), labels] -= 1.0
    d /= bsz
    grads = {}
    for k in range(len(blend.layers) - 1, -1, -1):
        grads[f"dense.{k}.weight"] = d.T @ acts[k]
        grads[f"dense.{k}.bias"] = d.sum(0)
        if k:
            d = (d @ blend.layers[k].weight) * (pre[k - 1] > 0)
    return float(per_beat.mean()), grads, per_beat


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params, grads, moments: AdamState, t: int, cfg: TrainConfig):
    """In-place Adam update with bias correction; returns ``(params, moments)``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, g in grads.items():
        m = moments.m[k]
        v = moments.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    moments.t = t
    return params, moments


def _copy_params(params):
    return {k: a.copy() for k, a in params.items()}


def _run_epochs(params, step_fn, n, epochs, cfg, rng, what):
    """Shared mini-batch loop.  ``step_fn(idx)`` returns ``(loss, grads)``."""
    state = AdamState.zeros_like(params)
    losses = []
    good = _copy_params(params)
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            try:
                loss, grads = step_fn(idx)
            except TrainingDiverged as exc:
                beat = None if exc.beat is None else int(idx[exc.beat])
                raise TrainingDiverged(f"{what} diverged in epoch {epoch + 1}: train beat {beat}",
                                       checkpoint=good, epoch=epoch, beat=beat) from None
            t += 1
            adam_step(params, grads, state, t, cfg)
            total += loss * idx.size
        mean = total / n
        if not np.isfinite(mean) or not all(np.all(np.isfinite(a)) for a in params.values()):
            raise TrainingDiverged(f"{what} weights became non-finite in epoch {epoch + 1}",
                                   checkpoint=good, epoch=epoch)
        good = _copy_params(params)
        losses.append(mean)
        log.debug("%s epoch %d loss %.5f", what, epoch + 1, mean)
    return losses


def train_model(model, seqs, labels, cfg: TrainConfig, rng: np.random.Generator, what: str = "model"):
    """Mini-batch BPTT + Adam over ``cfg.epochs``; returns ``(model, per-epoch losses)``."""
    labels = np.asarray(labels, dtype=np.int64)
    params = model_params(model)

    def step(idx):
        c0 = sample_c0(model, rng, cfg.c_init)
        loss, grads, _ = bptt_gradients(model, [s[idx] for s in seqs], labels[idx], c0)
        return loss, grads

    losses = _run_epochs(params, step, labels.size, cfg.epochs, cfg, rng, what)
    return model, losses


def train_blend(blend: BlendMlp, p_alpha, p_beta, labels, cfg: TrainConfig, rng: np.random.Generator):
    x = np.concatenate([p_alpha, p_beta], axis=1)
    labels = np.asarray(labels, dtype=np.int64)
    params = model_params(blend)

    def step(idx):
        loss, grads, _ = blend_gradients(blend, x[idx], labels[idx])
        return loss, grads

    losses = _run_epochs(params, step, labels.size, cfg.blend_epochs, cfg, rng, "blend")
    return blend, losses


# --------------------------------------------------------------------------
# full per-patient fit


def fit_bundle(train: TrainSet, cfg: TrainConfig):
    """Scaler, PCA, alpha, beta and blend fitted on one train set.  Returns ``(bundle, report)``."""
    arch = cfg.arch
    seeds = np.random.SeedSequence([cfg.seed, 7]).spawn(6)
    rngs = [np.random.default_rng(s) for s in seeds]
    raw = extract_features(train.beats, arch)
    scaler = Scaler.fit(raw)
    batch = scaler.apply(raw)
    y = train.labels
    alpha = ModelAlpha.init(arch, rngs[0])
    s1, s2 = alpha_sequences(batch, arch)
    alpha_seqs = [s1] + ([s2] if arch.use_wavelet else [])
    alpha, loss_a = train_model(alpha, alpha_seqs, y, cfg, rngs[1], "alpha")
    pca = pca_fit(beta_vector(batch), arch.pca_k)
    beta = ModelBeta.init(arch, rngs[2], pca=pca)
    beta, loss_b = train_model(beta, [beta_sequences(beta, batch, arch)], y, cfg, rngs[3], "beta")
    pa = alpha_forward(alpha, batch, arch)
    pb = beta_forward(beta, batch, arch)
    blend = BlendMlp.init(arch.blend_hidden, rngs[4])
    blend, loss_m = train_blend(blend, pa, pb, y, cfg, rngs[5])
    counts = tuple(int(np.sum(y == c)) for c in range(N_CLASSES))
    info = {"record": int(train.record_id), "seed": int(cfg.seed), "minutes": float(cfg.minutes),
            "train_mean_rr": float(train.train_mean_rr), "cutoff_sample": int(train.cutoff)}
    bundle = ModelBundle(arch, alpha, beta, blend, scaler, counts, info=info).astype(np.float32)
    report = {
        "record": int(train.record_id),
        "arch": arch.to_dict(),
        "counts": train.counts(),
        "missing_global_classes": list(train.missing_classes),
        "loss": {"alpha": loss_a, "beta": loss_b, "blend": loss_m},
        "train_mean_rr": float(train.train_mean_rr),
        "cutoff_sample": int(train.cutoff),
        "n_train": len(train),
    }
    return bundle, report


# --------------------------------------------------------------------------
# grid search


def f1_for_class(y_true, y_pred, k: int) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = np.sum((y_true == k) & (y_pred == k))
    fp = np.sum((y_true != k) & (y_pred == k))
    fn = np.sum((y_true == k) & (y_pred != k))
    if tp == 0:
        return float("nan")
    return float(2 * tp / (2 * tp + fp + fn))


def arch_cost(arch: ArchSpec) -> int:
    """Per-step cell cost summed over every layer of the three branches."""
    c = arch.n_leads * arch.frame_width
    total = 0
    for n_in, nh in ((c, arch.hidden_alpha1), (c, arch.hidden_alpha2), (arch.frame_width, arch.hidden_beta)):
        for k in range(arch.n_layers):
            total += cell_cost(arch.cell_type, n_in if k == 0 else nh, nh)
    return total


def validation_split(train: TrainSet, fraction: float):
    """Indices ``(fit, val)``: val is the last ``fraction`` of local beats by time."""
    local = np.nonzero(train.provenance == "local")[0]
    local = local[np.argsort([train.beats[i].r_index for i in local], kind="stable")]
    n_val = max(1, int(round(fraction * local.size)))
    val = local[-n_val:]
    fit = np.setdiff1d(np.arange(len(train)), val)
    return fit, val


def _score_config(args):
    train, val_idx, fit_idx, cfg = args
    bundle, _ = fit_bundle(train.subset(fit_idx), cfg)
    val = train.subset(val_idx)
    pred, _ = predict(bundle, val.beats)
    f1 = f1_for_class(val.labels, pred, V_INDEX)
    return {"arch": cfg.arch.to_dict(), "f1_v": f1, "cost": arch_cost(cfg.arch),
            "val_accuracy": float(np.mean(pred == val.labels))}


@dataclass
class GridResult:
    best: ArchSpec
    scores: list


def grid_search(train: TrainSet, grid: GridSpec, cfg: TrainConfig, n_jobs: int = 1) -> GridResult:
    """Pick the configuration with the best V-class F1 on the held-out local tail.

    Undefined F1 (no V beat found) ranks as 0; ties go to the cheaper cell.
    """
    archs = grid.configs(cfg.arch)
    fit_idx, val_idx = validation_split(train, cfg.val_fraction)
    jobs = [(train, val_idx, fit_idx, replace(cfg, arch=a, seed=cfg.seed + 1000 * k))
            for k, a in enumerate(archs)]
    if n_jobs == 1 or len(jobs) == 1:
        scores = [_score_config(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            scores = list(ex.map(_score_config, jobs))

    def key(k):
        f1 = scores[k]["f1_v"]
        return (-(0.0 if np.isnan(f1) else f1), scores[k]["cost"], k)

    best = min(range(len(scores)), key=key)
    return GridResult(archs[best], scores)


def train_patient(patient: LabelledRecord, pool: GlobalPool, split: DatasetSplit, cfg: TrainConfig,
                  grid: GridSpec | None = None, n_jobs: int = 1):
    """Assemble, optionally grid-search, and fit.  Returns ``(bundle, report)``."""
    train = assemble_train_set(patient, pool, split, cfg)
    grid_report = None
    if grid is not None:
        res = grid_search(train, grid, cfg, n_jobs)
        cfg = replace(cfg, arch=res.best)
        grid_report = {"chosen": res.best.to_dict(), "scores": res.scores}
    bundle, report = fit_bundle(train, cfg)
    report["grid"] = grid_report
    return bundle, report

