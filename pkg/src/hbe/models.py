"""Model alpha, model beta, the blend MLP and the per-patient bundle.

Feature path for one beat (``C`` leads, 252 samples each)::

    x_ecg (C, 252), rr (4,)                       -> standardised per feature
    x_w   (C, 127) = DWT(downsample2(x_ecg))     -> standardised per feature

    alpha branch 1: channel c = rr || x_ecg[c]   -> frames of 9 -> (29, 9C)
    alpha branch 2: channel c = rr || x_w[c]     -> frames of 9 -> (15, 9C)
    beta:           PCA(downsample2(x_ecg) || rr || x_w), whitened -> (ceil(k/9), 9)

Each branch ends in its final hidden state; alpha concatenates both before a
dense softmax head.  The blend MLP maps ``p_alpha || p_beta`` to the final
probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .record_io import CLASSES, N_CLASSES
from .rnn import (
    CELL_TYPES,
    DenseLayer,
    PcaBasis,
    RnnLayer,
    cell_cost,
    dense_softmax,
    layer_arrays,
    layer_forward,
    layer_from_arrays,
    load_arrays,
    save_arrays,
    softmax,
    stack_final_state,
)
from .wavelet import WaveletSpec, band_lengths, downsample2, wavelet_cost, wavelet_features

BEAT_SAMPLES = 252
N_RR = 4


class UnscaledBeatError(ValueError):
    """Raised when raw features reach a model without the frozen scaling."""


class ProbabilityError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    """Architecture hyper-parameters shared by training and inference."""

    cell_type: str = "lstm"
    n_layers: int = 1
    hidden_alpha1: int = 30
    hidden_alpha2: int = 30
    hidden_beta: int = 50
    frame_width: int = 9
    pca_k: int = 64
    blend_hidden: tuple[int, int] = (14, 14)
    wavelet_order: int = 2
    wavelet_levels: int = 4
    use_wavelet: bool = True
    n_leads: int = 2

    def __post_init__(self):
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        sizes = (self.n_layers, self.hidden_alpha1, self.hidden_alpha2, self.hidden_beta,
                 self.frame_width, self.pca_k, *self.blend_hidden)
        if min(sizes) < 1:
            raise ValueError(f"all layer sizes must be >= 1: {self}")
        if self.n_leads not in (1, 2):
            raise ValueError("n_leads must be 1 or 2")
        if self.pca_k > self.beta_input_dim:
            raise ValueError(f"pca_k={self.pca_k} exceeds beta input size {self.beta_input_dim}")
        WaveletSpec(self.wavelet_order, self.wavelet_levels)

    @property
    def wavelet(self) -> WaveletSpec:
        return WaveletSpec(self.wavelet_order, self.wavelet_levels)

    @property
    def n_wavelet(self) -> int:
        return sum(band_lengths(BEAT_SAMPLES // 2, self.wavelet_levels)) if self.use_wavelet else 0

    @property
    def beta_input_dim(self) -> int:
        return self.n_leads * BEAT_SAMPLES // 2 + N_RR + self.n_leads * self.n_wavelet

    def steps(self, length: int) -> int:
        return math.ceil(length / self.frame_width)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blend_hidden"] = list(self.blend_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        if "blend_hidden" in d:
            d["blend_hidden"] = tuple(d["blend_hidden"])
        return cls(**d)


# --------------------------------------------------------------------------
# features and scaling


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """Stacked per-beat features; ``scaled`` is set only by :class:`Scaler`."""

    ecg: np.ndarray  # (B, C, 252)
    rr: np.ndarray  # (B, 4)
    xw: np.ndarray | None  # (B, C, n_w) or None without wavelet features
    scaled: bool = False

    def __len__(self):
        return self.ecg.shape[0]

    def take(self, idx) -> "FeatureBatch":
        idx = np.atleast_1d(idx)
        return FeatureBatch(self.ecg[idx], self.rr[idx], None if self.xw is None else self.xw[idx], self.scaled)

    @staticmethod
    def concat(batches) -> "FeatureBatch":
        batches = list(batches)
        xw = None if batches[0].xw is None else np.concatenate([b.xw for b in batches])
        return FeatureBatch(np.concatenate([b.ecg for b in batches]),
                            np.concatenate([b.rr for b in batches]), xw, batches[0].scaled)


def extract_features(beats, arch: ArchSpec) -> FeatureBatch:
    """Raw features for a list of :class:`~hbe.qrs.BeatSegment`."""
    if not beats:
        raise ValueError("no beats to extract features from")
    ecg = np.stack([np.atleast_2d(b.x_ecg)[: arch.n_leads] for b in beats]).astype(np.float64)
    if ecg.shape[1] != arch.n_leads:
        raise ValueError(f"beats carry {ecg.shape[1]} lead(s), model expects {arch.n_leads}")
    rr = np.stack([b.rr for b in beats]).astype(np.float64)
    xw = wavelet_features(downsample2(ecg), arch.wavelet).x_w if arch.use_wavelet else None
    return FeatureBatch(ecg, rr, xw)


def _stats(x, axis):
    mean = x.mean(axis=axis)
    std = x.std(axis=axis)
    # constant features (e.g. the train-mean RR of a single record) pass through centred
    return mean, np.where(std > 1e-8, std, 1.0)


@dataclass(frozen=True, eq=False)
class Scaler:
    ecg_mean: np.ndarray
    ecg_std: np.ndarray
    rr_mean: np.ndarray
    rr_std: np.ndarray
    xw_mean: np.ndarray | None = None
    xw_std: np.ndarray | None = None

    @classmethod
    def fit(cls, batch: FeatureBatch) -> "Scaler":
        if batch.scaled:
            raise ValueError("fit the scaler on raw features")
        em, es = _stats(batch.ecg, 0)
        rm, rs = _stats(batch.rr, 0)
        wm = ws = None
        if batch.xw is not None:
            wm, ws = _stats(batch.xw, 0)
        return cls(em, es, rm, rs, wm, ws)

    def apply(self, batch: FeatureBatch) -> FeatureBatch:
        if batch.scaled:
            raise ValueError("batch is already scaled")
        if (batch.xw is None) != (self.xw_mean is None):
            raise ValueError("wavelet features present in only one of scaler and batch")
        xw = None if batch.xw is None else (batch.xw - self.xw_mean) / self.xw_std
        return FeatureBatch((batch.ecg - self.ecg_mean) / self.ecg_std,
                            (batch.rr - self.rr_mean) / self.rr_std, xw, scaled=True)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"ecg_mean": self.ecg_mean, "ecg_std": self.ecg_std,
               "rr_mean": self.rr_mean, "rr_std": self.rr_std}
        if self.xw_mean is not None:
            out.update(xw_mean=self.xw_mean, xw_std=self.xw_std)
        return out

    @classmethod
    def from_arrays(cls, a) -> "Scaler":
        return cls(a["ecg_mean"], a["ecg_std"], a["rr_mean"], a["rr_std"], a.get("xw_mean"), a.get("xw_std"))

    def astype(self, dtype) -> "Scaler":
        return Scaler.from_arrays({k: v.astype(dtype) for k, v in self.arrays().items()})


def _require_scaled(batch: FeatureBatch):
    if not isinstance(batch, FeatureBatch):
        raise TypeError(f"expected FeatureBatch, got {type(batch).__name__}")
    if not batch.scaled:
        raise UnscaledBeatError("beat features are unscaled; apply the bundle's Scaler first")


def frame(x, width: int) -> np.ndarray:
    """``(..., C, L)`` -> ``(..., ceil(L/width), C*width)``, zero-padding the tail."""
    x = np.asarray(x)
    *lead, c, n = x.shape
    steps = math.ceil(n / width)
    pad = steps * width - n
    if pad:
        x = np.concatenate([x, np.zeros((*lead, c, pad), x.dtype)], axis=-1)
    x = x.reshape(*lead, c, steps, width)
    return np.swapaxes(x, -3, -2).reshape(*lead, steps, c * width)


def _with_rr(rr, channels):
    """Prefix every channel with the RR features: ``(B, 4) , (B, C, L)`` -> ``(B, C, 4+L)``."""
    b, c, _ = channels.shape
    return np.concatenate([np.broadcast_to(rr[:, None, :], (b, c, rr.shape[1])), channels], axis=-1)


def alpha_sequences(batch: FeatureBatch, arch: ArchSpec):
    _require_scaled(batch)
    s1 = frame(_with_rr(batch.rr, batch.ecg), arch.frame_width)
    s2 = frame(_with_rr(batch.rr, batch.xw), arch.frame_width) if arch.use_wavelet else None
    return s1, s2


def beta_vector(batch: FeatureBatch) -> np.ndarray:
    """``downsample2(x_ecg) || rr || x_w`` flattened per beat, ``(B, d)``."""
    _require_scaled(batch)
    b = len(batch)
    parts = [downsample2(batch.ecg).reshape(b, -1), batch.rr]
    if batch.xw is not None:
        parts.append(batch.xw.reshape(b, -1))
    return np.concatenate(parts, axis=1)


# --------------------------------------------------------------------------
# models


@dataclass(eq=False)
class ModelAlpha:
    branch1: list[RnnLayer]
    branch2: list[RnnLayer] | None
    head: DenseLayer

    def __post_init__(self):
        n = self.branch1[-1].n_hidden + (self.branch2[-1].n_hidden if self.branch2 else 0)
        if self.head.n_in != n:
            raise ValueError(f"alpha head takes {self.head.n_in} inputs, branches give {n}")

    @classmethod
    def init(cls, arch: ArchSpec, rng: np.random.Generator, n_classes: int = N_CLASSES) -> "ModelAlpha":
        c = arch.n_leads * arch.frame_width
        b1 = _stack(arch, c, arch.hidden_alpha1, rng)
        b2 = _stack(arch, c, arch.hidden_alpha2, rng) if arch.use_wavelet else None
        n = arch.hidden_alpha1 + (arch.hidden_alpha2 if arch.use_wavelet else 0)
        return cls(b1, b2, DenseLayer.init(n, n_classes, rng))

    def layers(self) -> list[RnnLayer]:
        return self.branch1 + (self.branch2 or [])

    def astype(self, dtype) -> "ModelAlpha":
        return ModelAlpha([l.astype(dtype) for l in self.branch1],
                          None if self.branch2 is None else [l.astype(dtype) for l in self.branch2],
                          self.head.astype(dtype))


@dataclass(eq=False)
class ModelBeta:
    pca: PcaBasis | None
    pca_scale: np.ndarray | None  # per-component std of the PCA scores
    layers: list[RnnLayer]
    head: DenseLayer

    def __post_init__(self):
        if self.head.n_in != self.layers[-1].n_hidden:
            raise ValueError("beta head input must equal the last layer's hidden size")

    @classmethod
    def init(cls, arch: ArchSpec, rng: np.random.Generator, n_classes: int = N_CLASSES,
             pca: PcaBasis | None = None) -> "ModelBeta":
        scale = None
        if pca is not None:
            scale = np.sqrt(np.maximum(pca.explained_variance, 1e-12))
        layers = _stack(arch, arch.frame_width, arch.hidden_beta, rng)
        return cls(pca, scale, layers, DenseLayer.init(arch.hidden_beta, n_classes, rng))

    def astype(self, dtype) -> "ModelBeta":
        return ModelBeta(None if self.pca is None else self.pca.astype(dtype),
                         None if self.pca_scale is None else self.pca_scale.astype(dtype),
                         [l.astype(dtype) for l in self.layers], self.head.astype(dtype))


def _stack(arch, n_in, n_hidden, rng):
    layers = []
    for k in range(arch.n_layers):
        layers.append(RnnLayer.init(arch.cell_type, n_in if k == 0 else n_hidden, n_hidden, rng))
    return layers


@dataclass(eq=False)
class BlendMlp:
    layers: list[DenseLayer]  # ReLU between layers, softmax after the last

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError("blend layer sizes do not chain")
        if self.layers[0].n_in != 2 * self.layers[-1].n_out:
            raise ValueError("blend input must be twice the number of classes")

    @classmethod
    def init(cls, hidden, rng: np.random.Generator, n_classes: int = N_CLASSES) -> "BlendMlp":
        sizes = [2 * n_classes, *hidden, n_classes]
        return cls([DenseLayer.init(a, b, rng) for a, b in zip(sizes, sizes[1:])])

    def astype(self, dtype) -> "BlendMlp":
        return BlendMlp([l.astype(dtype) for l in self.layers])


def _stack_forward(layers, xs, c0=None):
    seq = xs
    for layer in layers:
        seq = layer_forward(layer, seq, c0=c0)
    return seq[:, -1]


def alpha_forward(model: ModelAlpha, batch: FeatureBatch, arch: ArchSpec) -> np.ndarray:
    """Probabilities ``(B, N_y)``; inference starts every sequence from ``c = 0``."""
    s1, s2 = alpha_sequences(batch, arch)
    dt = model.head.weight.dtype
    feats = [_stack_forward(model.branch1, s1.astype(dt))]
    if model.branch2 is not None:
        feats.append(_stack_forward(model.branch2, s2.astype(dt)))
    return dense_softmax(model.head, np.concatenate(feats, axis=1))


def beta_sequences(model: ModelBeta, batch: FeatureBatch, arch: ArchSpec) -> np.ndarray:
    if model.pca is None:
        raise ValueError("model beta has no fitted PCA basis")
    v = beta_vector(batch)
    if v.shape[1] != model.pca.mean.shape[0]:
        raise ValueError(f"beta input has {v.shape[1]} features, PCA expects {model.pca.mean.shape[0]}")
    dt = model.head.weight.dtype
    z = ((v.astype(dt) - model.pca.mean) @ model.pca.components.T) / model.pca_scale
    return frame(z[:, None, :], arch.frame_width)


def beta_forward(model: ModelBeta, batch: FeatureBatch, arch: ArchSpec) -> np.ndarray:
    xs = beta_sequences(model, batch, arch)
    return dense_softmax(model.head, _stack_forward(model.layers, xs))


def check_probabilities(p, name: str):
    p = np.asarray(p)
    s = p.sum(axis=-1)
    if not np.all(np.abs(s - 1.0) <= 1e-6) or np.any(p < 0):
        raise ProbabilityError(f"{name} is not a probability vector (sums {np.atleast_1d(s)[:3]}...)")


def blend_logits(blend: BlendMlp, p_alpha, p_beta) -> np.ndarray:
    x = np.concatenate([p_alpha, p_beta], axis=-1)
    for layer in blend.layers[:-1]:
        x = np.maximum(layer(x), 0.0)
    return blend.layers[-1](x)


def blend_forward(blend: BlendMlp, p_alpha, p_beta) -> np.ndarray:
    check_probabilities(p_alpha, "p_alpha")
    check_probabilities(p_beta, "p_beta")
    dt = blend.layers[0].weight.dtype
    return softmax(blend_logits(blend, np.asarray(p_alpha, dt), np.asarray(p_beta, dt)))


# --------------------------------------------------------------------------
# bundle

MODES = ("blend", "alpha_only", "beta_only")


@dataclass(eq=False)
class ModelBundle:
    arch: ArchSpec
    alpha: ModelAlpha
    beta: ModelBeta
    blend: BlendMlp
    scaler: Scaler
    class_counts: tuple[int, ...]  # train-set counts, drives the tie-break
    classes: tuple[str, ...] = CLASSES
    mode: str = "blend"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.class_counts) != len(self.classes):
            raise ValueError("class_counts length must match classes")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def with_mode(self, mode: str) -> "ModelBundle":
        """Alpha-only / beta-only evaluation without retraining."""
        return replace(self, mode=mode)

    def astype(self, dtype) -> "ModelBundle":
        return replace(self, alpha=self.alpha.astype(dtype), beta=self.beta.astype(dtype),
                       blend=self.blend.astype(dtype), scaler=self.scaler.astype(dtype))

    @property
    def priority(self) -> np.ndarray:
        """Class indices ordered for tie-breaking: most frequent first, then lowest index."""
        counts = np.asarray(self.class_counts)
        return np.array(sorted(range(len(counts)), key=lambda k: (-counts[k], k)))

    def prepare(self, beats) -> FeatureBatch:
        return self.scaler.apply(extract_features(beats, self.arch))


def pick_label(probs, priority) -> np.ndarray:
    """Argmax per row; exact ties go to the earliest class in ``priority``."""
    probs = np.atleast_2d(probs)
    top = probs.max(axis=1, keepdims=True)
    hit = probs[:, priority] == top
    return priority[np.argmax(hit, axis=1)]


def predict_proba(bundle: ModelBundle, batch: FeatureBatch) -> np.ndarray:
    if bundle.mode == "alpha_only":
        return alpha_forward(bundle.alpha, batch, bundle.arch)
    if bundle.mode == "beta_only":
        return beta_forward(bundle.beta, batch, bundle.arch)
    pa = alpha_forward(bundle.alpha, batch, bundle.arch)
    pb = beta_forward(bundle.beta, batch, bundle.arch)
    return blend_forward(bundle.blend, pa, pb)


def predict(bundle: ModelBundle, beats, chunk: int = 2048):
    """Batched labels and probabilities for many beats."""
    probs = []
    for s in range(0, len(beats), chunk):
        probs.append(predict_proba(bundle, bundle.prepare(beats[s : s + chunk])))
    probs = np.concatenate(probs) if probs else np.zeros((0, len(bundle.classes)))
    labels = pick_label(probs, bundle.priority) if len(probs) else np.zeros(0, int)
    return labels, probs


def classify_beat(bundle: ModelBundle, beat, use: str | None = None):
    """Single-beat path used for streaming and latency: ``(label, probabilities)``.

    Runs each branch through the compiled sequence kernel; ``use`` forces
    ``"numba"`` or ``"numpy"``.
    """
    batch = bundle.prepare([beat])
    arch = bundle.arch
    pa = pb = None
    if bundle.mode != "beta_only":
        s1, s2 = alpha_sequences(batch, arch)
        dt = bundle.alpha.head.weight.dtype
        feats = [stack_final_state(bundle.alpha.branch1, s1[0].astype(dt), use=use)]
        if bundle.alpha.branch2 is not None:
            feats.append(stack_final_state(bundle.alpha.branch2, s2[0].astype(dt), use=use))
        pa = dense_softmax(bundle.alpha.head, np.concatenate(feats))
    if bundle.mode != "alpha_only":
        xs = beta_sequences(bundle.beta, batch, arch)[0]
        pb = dense_softmax(bundle.beta.head, stack_final_state(bundle.beta.layers, xs, use=use))
    if bundle.mode == "alpha_only":
        p = pa
    elif bundle.mode == "beta_only":
        p = pb
    else:
        p = blend_forward(bundle.blend, pa, pb)
    label = int(pick_label(p, bundle.priority)[0])
    return bundle.classes[label], p


def inference_op_count(arch: ArchSpec, n_classes: int = N_CLASSES) -> dict:
    """Analytic multiply count per beat from the DWT and per-step cell costs."""
    w = arch.frame_width
    c = arch.n_leads

    def stack_cost(n_in, n_h, steps):
        total = 0
        for k in range(arch.n_layers):
            total += steps * cell_cost(arch.cell_type, n_in if k == 0 else n_h, n_h)
        return total

    dwt = c * wavelet_cost(BEAT_SAMPLES // 2, arch.wavelet_order, arch.wavelet_levels) if arch.use_wavelet else 0
    a1 = stack_cost(c * w, arch.hidden_alpha1, arch.steps(N_RR + BEAT_SAMPLES))
    a2 = stack_cost(c * w, arch.hidden_alpha2, arch.steps(N_RR + arch.n_wavelet)) if arch.use_wavelet else 0
    na = arch.hidden_alpha1 + (arch.hidden_alpha2 if arch.use_wavelet else 0)
    beta = stack_cost(w, arch.hidden_beta, arch.steps(arch.pca_k))
    pca = arch.pca_k * arch.beta_input_dim
    sizes = [2 * n_classes, *arch.blend_hidden, n_classes]
    blend = sum(a * b for a, b in zip(sizes, sizes[1:]))
    heads = na * n_classes + arch.hidden_beta * n_classes
    parts = {"dwt": dwt, "alpha_branch1": a1, "alpha_branch2": a2, "pca": pca, "beta": beta,
             "heads": heads, "blend": blend}
    parts["total"] = sum(parts.values())
    return parts


# --------------------------------------------------------------------------
# bundle files: meta.json + HBE1 weight files


def _dense_arrays(prefix, layer):
    return {f"{prefix}.weight": layer.weight, f"{prefix}.bias": layer.bias}


def save_bundle(bundle: ModelBundle, out_dir) -> None:
    """Write ``meta.json`` and ``alpha/beta/blend/scaler.hbe1`` into ``out_dir``.

    Weights are stored as float32; nothing time-dependent is written, so the
    same bundle always produces identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch = bundle.arch
    alpha = {}
    for k, layer in enumerate(bundle.alpha.branch1):
        alpha.update(layer_arrays(f"branch1.{k}", layer))
    for k, layer in enumerate(bundle.alpha.branch2 or []):
        alpha.update(layer_arrays(f"branch2.{k}", layer))
    alpha.update(_dense_arrays("head", bundle.alpha.head))
    beta = {"pca.mean": bundle.beta.pca.mean, "pca.components": bundle.beta.pca.components,
            "pca.explained_variance": bundle.beta.pca.explained_variance, "pca.scale": bundle.beta.pca_scale}
    for k, layer in enumerate(bundle.beta.layers):
        beta.update(layer_arrays(f"layers.{k}", layer))
    beta.update(_dense_arrays("head", bundle.beta.head))
    blend = {}
    for k, layer in enumerate(bundle.blend.layers):
        blend.update(_dense_arrays(f"dense.{k}", layer))
    save_arrays(out / "alpha.hbe1", alpha, {"cell_type": arch.cell_type, "component": "alpha"})
    save_arrays(out / "beta.hbe1", beta, {"cell_type": arch.cell_type, "component": "beta", "pca_k": arch.pca_k})
    save_arrays(out / "blend.hbe1", blend, {"component": "blend", "activation": "relu"})
    save_arrays(out / "scaler.hbe1", bundle.scaler.arrays(), {"component": "scaler"})
    meta = {
        "format": "hbe-bundle",
        "version": 1,
        "arch": arch.to_dict(),
        "classes": list(bundle.classes),
        "class_counts": [int(c) for c in bundle.class_counts],
        "pca_k": arch.pca_k,
        "info": bundle.info,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no bundle at {path} (meta.json missing)") from None
    if meta.get("format") != "hbe-bundle" or meta.get("version") != 1:
        raise ValueError(f"{path}: unsupported bundle format")
    arch = ArchSpec.from_dict(meta["arch"])
    _, a = load_arrays(path / "alpha.hbe1")
    _, b = load_arrays(path / "beta.hbe1")
    _, m = load_arrays(path / "blend.hbe1")
    _, s = load_arrays(path / "scaler.hbe1")
    ct = arch.cell_type
    nl = arch.n_layers
    alpha = ModelAlpha(
        [layer_from_arrays(f"branch1.{k}", ct, a) for k in range(nl)],
        [layer_from_arrays(f"branch2.{k}", ct, a) for k in range(nl)] if arch.use_wavelet else None,
        DenseLayer(a["head.weight"], a["head.bias"]),
    )
    pca = PcaBasis(b["pca.mean"], b["pca.components"], b["pca.explained_variance"])
    beta = ModelBeta(pca, b["pca.scale"], [layer_from_arrays(f"layers.{k}", ct, b) for k in range(nl)],
                     DenseLayer(b["head.weight"], b["head.bias"]))
    n_dense = len(arch.blend_hidden) + 1
    blend = BlendMlp([DenseLayer(m[f"dense.{k}.weight"], m[f"dense.{k}.bias"]) for k in range(n_dense)])
    return ModelBundle(arch, alpha, beta, blend, Scaler.from_arrays(s), tuple(meta["class_counts"]),
                       tuple(meta["classes"]), info=meta.get("info", {}))
