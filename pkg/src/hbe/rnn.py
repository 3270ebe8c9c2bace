"""Recurrent cells, dense/softmax heads, PCA and the per-step cost model.

Cell equations (``j`` indexes hidden units, ``σ`` is the logistic sigmoid):

simple    m = tanh(w x + u h + b);  c = c_prev + m;  h = tanh(c)
lstm      f, i, o = σ(w_* x + u_* h + b_*);  m = tanh(w_m x + u_m h + b_m)
          c = f c_prev + i m;  h = o tanh(c)
peephole  lstm, with p_f c_prev, p_i c_prev, p_o c_prev added to the gate
          pre-activations (diagonal peepholes)
gru       z, r = σ(w_* x + u_* c_prev + b_*)
          c = (1 - z) c_prev + z tanh(w x + u (r c_prev) + b);  h = c

Stacked weight rows follow the gate order in ``GATES``.  Batched arrays are
laid out ``(batch, time, features)``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import njit, pick

CELL_TYPES = ("simple", "lstm", "peephole", "gru")
GATES = {
    "simple": ("m",),
    "lstm": ("m", "f", "i", "o"),
    "peephole": ("m", "f", "i", "o"),
    "gru": ("g", "z", "r"),
}
_CELL_CODE = {"simple": 0, "lstm": 1, "peephole": 2, "gru": 3}

# Per-step cost a*Nx*Nh + b*Nh^2 + c*Nh + d, in multiply-accumulates.
# c counts elementwise products on N_h vectors (state update and gating);
# additions and nonlinearities are not counted, so d = 0 for every cell.
COST_CONSTANTS = {
    "simple": (1, 1, 0, 0),
    "lstm": (4, 4, 3, 0),
    "peephole": (4, 4, 6, 0),
    "gru": (3, 3, 3, 0),
}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def cell_cost(cell_type: str, n_x: int, n_h: int) -> int:
    a, b, c, d = COST_CONSTANTS[cell_type]
    return a * n_x * n_h + b * n_h * n_h + c * n_h + d


# --------------------------------------------------------------------------
# weights


@dataclass(eq=False)
class RnnLayer:
    """One recurrent layer.  ``w``: (G*Nh, Nx), ``u``: (G*Nh, Nh), ``b``: (G*Nh,)."""

    cell_type: str
    w: np.ndarray
    u: np.ndarray
    b: np.ndarray
    p: np.ndarray | None = None  # (3, Nh) peephole vectors for f, i, o

    def __post_init__(self):
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        g = len(GATES[self.cell_type])
        nh = self.u.shape[1]
        if self.w.shape[0] != g * nh or self.u.shape != (g * nh, nh) or self.b.shape != (g * nh,):
            raise ValueError(f"inconsistent {self.cell_type} weight shapes "
                             f"w{self.w.shape} u{self.u.shape} b{self.b.shape}")
        if self.cell_type == "peephole":
            if self.p is None or self.p.shape != (3, nh):
                raise ValueError("peephole cell needs p of shape (3, N_h)")
        elif self.p is not None:
            raise ValueError(f"{self.cell_type} cell takes no peephole vectors")

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.u.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        d = {"w": self.w, "u": self.u, "b": self.b}
        if self.p is not None:
            d["p"] = self.p
        return d

    def astype(self, dtype) -> "RnnLayer":
        return RnnLayer(self.cell_type, self.w.astype(dtype), self.u.astype(dtype),
                        self.b.astype(dtype), None if self.p is None else self.p.astype(dtype))

    def gate(self, name: str):
        """Per-gate view ``(w, u, b)`` of the stacked matrices."""
        k = GATES[self.cell_type].index(name)
        nh = self.n_hidden
        s = slice(k * nh, (k + 1) * nh)
        return self.w[s], self.u[s], self.b[s]

    @classmethod
    def init(cls, cell_type: str, n_in: int, n_hidden: int, rng: np.random.Generator) -> "RnnLayer":
        if n_in < 1 or n_hidden < 1:
            raise ValueError("layer sizes must be positive")
        g = len(GATES[cell_type])
        lim_w = np.sqrt(6.0 / (n_in + n_hidden))
        w = rng.uniform(-lim_w, lim_w, size=(g * n_hidden, n_in))
        u = np.concatenate([_orthogonal(n_hidden, rng) for _ in range(g)], axis=0)
        b = np.zeros(g * n_hidden)
        if cell_type in ("lstm", "peephole"):
            b[n_hidden : 2 * n_hidden] = 1.0  # forget-gate bias
        p = rng.uniform(-0.1, 0.1, size=(3, n_hidden)) if cell_type == "peephole" else None
        return cls(cell_type, w, u, b, p)

    @classmethod
    def zeros(cls, cell_type: str, n_in: int, n_hidden: int) -> "RnnLayer":
        g = len(GATES[cell_type])
        p = np.zeros((3, n_hidden)) if cell_type == "peephole" else None
        return cls(cell_type, np.zeros((g * n_hidden, n_in)), np.zeros((g * n_hidden, n_hidden)),
                   np.zeros(g * n_hidden), p)


def _orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


@dataclass(eq=False)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"dense shapes inconsistent: {self.weight.shape}, {self.bias.shape}")

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def astype(self, dtype) -> "DenseLayer":
        return DenseLayer(self.weight.astype(dtype), self.bias.astype(dtype))

    def __call__(self, x):
        return x @ self.weight.T + self.bias

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        lim = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out))


def dense_softmax(layer: DenseLayer, features) -> np.ndarray:
    features = np.asarray(features)
    if features.shape[-1] != layer.n_in:
        raise ValueError(f"feature size {features.shape[-1]} does not match dense input {layer.n_in}")
    return softmax(layer(features))


# --------------------------------------------------------------------------
# single step and layer forward


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


def cell_step(layer: RnnLayer, state: CellState, x_t):
    """Advance one time step; returns ``(new_state, h_t)``.  Works batched."""
    x_t = np.asarray(x_t, dtype=layer.w.dtype)
    if x_t.shape[-1] != layer.n_in:
        raise ValueError(f"input size {x_t.shape[-1]} != N_x {layer.n_in}")
    h, c, _ = _step(layer, x_t, state.h, state.c)
    return CellState(h, c), h


def _step(layer: RnnLayer, x, h_prev, c_prev):
    nh = layer.n_hidden
    kind = layer.cell_type
    if kind == "gru":
        ax = x @ layer.w.T + layer.b
        az = ax[..., nh : 2 * nh] + c_prev @ layer.u[nh : 2 * nh].T
        ar = ax[..., 2 * nh :] + c_prev @ layer.u[2 * nh :].T
        z = sigmoid(az)
        r = sigmoid(ar)
        rc = r * c_prev
        g = np.tanh(ax[..., :nh] + rc @ layer.u[:nh].T)
        c = (1.0 - z) * c_prev + z * g
        return c, c, (x, c_prev, z, r, rc, g)
    a = x @ layer.w.T + h_prev @ layer.u.T + layer.b
    if kind == "simple":
        m = np.tanh(a)
        c = c_prev + m
        h = np.tanh(c)
        return h, c, (x, h_prev, m, h)
    am, af, ai, ao = (a[..., k * nh : (k + 1) * nh] for k in range(4))
    if kind == "peephole":
        af = af + layer.p[0] * c_prev
        ai = ai + layer.p[1] * c_prev
        ao = ao + layer.p[2] * c_prev
    m = np.tanh(am)
    f = sigmoid(af)
    i = sigmoid(ai)
    o = sigmoid(ao)
    c = f * c_prev + i * m
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, m, f, i, o, tc)


def layer_forward(layer: RnnLayer, xs, h0=None, c0=None, return_cache: bool = False):
    """Run ``layer`` over ``xs`` of shape ``(T, Nx)`` or ``(B, T, Nx)``.

    Returns the hidden sequence with the same leading layout; the last step
    is the layer's feature vector.  ``h0`` defaults to zeros, ``c0`` too.
    """
    xs = np.asarray(xs)
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    if xs.shape[1] == 0:
        raise ValueError("empty input sequence")
    if xs.shape[2] != layer.n_in:
        raise ValueError(f"input size {xs.shape[2]} != N_x {layer.n_in}")
    bsz, steps, _ = xs.shape
    nh = layer.n_hidden
    dt = layer.w.dtype
    h = np.zeros((bsz, nh), dt) if h0 is None else np.broadcast_to(h0, (bsz, nh)).astype(dt)
    c = np.zeros((bsz, nh), dt) if c0 is None else np.broadcast_to(c0, (bsz, nh)).astype(dt)
    hs = np.empty((bsz, steps, nh), dt)
    caches = []
    for t in range(steps):
        h, c, cache = _step(layer, xs[:, t], h, c)
        hs[:, t] = h
        if return_cache:
            caches.append(cache)
    out = hs[0] if single else hs
    if return_cache:
        return out, caches
    return out


def layer_backward(layer: RnnLayer, caches, dhs):
    """BPTT through one layer.

    ``dhs`` (B, T, Nh) is dLoss/dh_t from above at every step.  Returns
    ``(grads, dxs, dh0, dc0)`` where grads are summed over the batch.
    """
    nh = layer.n_hidden
    kind = layer.cell_type
    grads = {k: np.zeros_like(v) for k, v in layer.params().items()}
    bsz, steps, _ = dhs.shape
    dxs = np.empty((bsz, steps, layer.n_in))
    dh_next = np.zeros((bsz, nh))
    dc_next = np.zeros((bsz, nh))
    for t in range(steps - 1, -1, -1):
        cache = caches[t]
        dh = dhs[:, t] + dh_next
        if kind == "gru":
            x, c_prev, z, r, rc, g = cache
            dc = dh + dc_next
            dz = dc * (g - c_prev)
            dg = dc * z
            dcp = dc * (1.0 - z)
            dag = dg * (1.0 - g * g)
            drc = dag @ layer.u[:nh]
            dr = drc * c_prev
            dcp += drc * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            dcp += daz @ layer.u[nh : 2 * nh] + dar @ layer.u[2 * nh :]
            da = np.concatenate([dag, daz, dar], axis=1)
            grads["w"] += da.T @ x
            grads["u"][:nh] += dag.T @ rc
            grads["u"][nh : 2 * nh] += daz.T @ c_prev
            grads["u"][2 * nh :] += dar.T @ c_prev
            grads["b"] += da.sum(0)
            dxs[:, t] = da @ layer.w
            dh_next = np.zeros_like(dh)
            dc_next = dcp
            continue
        if kind == "simple":
            x, h_prev, m, h = cache
            dc = dh * (1.0 - h * h) + dc_next
            da = dc * (1.0 - m * m)
            dcp = dc
        else:
            x, h_prev, c_prev, m, f, i, o, tc = cache
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dam = dc * i * (1.0 - m * m)
            daf = dc * c_prev * f * (1.0 - f)
            dai = dc * m * i * (1.0 - i)
            dao = do * o * (1.0 - o)
            dcp = dc * f
            if kind == "peephole":
                dcp = dcp + daf * layer.p[0] + dai * layer.p[1] + dao * layer.p[2]
                grads["p"][0] += (daf * c_prev).sum(0)
                grads["p"][1] += (dai * c_prev).sum(0)
                grads["p"][2] += (dao * c_prev).sum(0)
            da = np.concatenate([dam, daf, dai, dao], axis=1)
        grads["w"] += da.T @ x
        grads["u"] += da.T @ h_prev
        grads["b"] += da.sum(0)
        dxs[:, t] = da @ layer.w
        dh_next = da @ layer.u
        dc_next = dcp
    return grads, dxs, dh_next, dc_next


# --------------------------------------------------------------------------
# single-sequence inference kernel (float32 latency path)


def _sequence_numpy(code, w, u, b, p, xs, c0):
    nh = u.shape[1]
    h = np.zeros(nh, dtype=w.dtype)
    c = c0.astype(w.dtype).copy()
    for t in range(xs.shape[0]):
        x = xs[t]
        if code == 3:
            ax = w @ x + b
            z = sigmoid(ax[nh : 2 * nh] + u[nh : 2 * nh] @ c)
            r = sigmoid(ax[2 * nh :] + u[2 * nh :] @ c)
            g = np.tanh(ax[:nh] + u[:nh] @ (r * c))
            c = (1 - z) * c + z * g
            h = c
            continue
        a = w @ x + u @ h + b
        if code == 0:
            c = c + np.tanh(a)
            h = np.tanh(c)
            continue
        af, ai, ao = a[nh : 2 * nh], a[2 * nh : 3 * nh], a[3 * nh :]
        if code == 2:
            af = af + p[0] * c
            ai = ai + p[1] * c
            ao = ao + p[2] * c
        c = sigmoid(af) * c + sigmoid(ai) * np.tanh(a[:nh])
        h = sigmoid(ao) * np.tanh(c)
    return h


@njit
def _sequence_jit(code, w, u, b, p, xs, c0):
    nh = u.shape[1]
    nx = w.shape[1]
    rows = w.shape[0]
    h = np.zeros(nh, dtype=w.dtype)
    c = c0.astype(w.dtype).copy()
    a = np.empty(rows, dtype=w.dtype)
    tmp = np.empty(nh, dtype=w.dtype)
    for t in range(xs.shape[0]):
        for r in range(rows):
            s = b[r]
            for k in range(nx):
                s += w[r, k] * xs[t, k]
            a[r] = s
        if code == 3:
            for j in range(nh):
                sz = a[nh + j]
                sr = a[2 * nh + j]
                for k in range(nh):
                    sz += u[nh + j, k] * c[k]
                    sr += u[2 * nh + j, k] * c[k]
                a[nh + j] = 1.0 / (1.0 + np.exp(-sz))
                a[2 * nh + j] = 1.0 / (1.0 + np.exp(-sr))
            for k in range(nh):
                tmp[k] = a[2 * nh + k] * c[k]
            for j in range(nh):
                sg = a[j]
                for k in range(nh):
                    sg += u[j, k] * tmp[k]
                z = a[nh + j]
                c[j] = (1.0 - z) * c[j] + z * np.tanh(sg)
            for j in range(nh):
                h[j] = c[j]
            continue
        for r in range(rows):
            s = a[r]
            for k in range(nh):
                s += u[r, k] * h[k]
            a[r] = s
        if code == 0:
            for j in range(nh):
                c[j] = c[j] + np.tanh(a[j])
                h[j] = np.tanh(c[j])
            continue
        for j in range(nh):
            af = a[nh + j]
            ai = a[2 * nh + j]
            ao = a[3 * nh + j]
            if code == 2:
                af += p[0, j] * c[j]
                ai += p[1, j] * c[j]
                ao += p[2, j] * c[j]
            f = 1.0 / (1.0 + np.exp(-af))
            i = 1.0 / (1.0 + np.exp(-ai))
            o = 1.0 / (1.0 + np.exp(-ao))
            c[j] = f * c[j] + i * np.tanh(a[j])
            h[j] = o * np.tanh(c[j])
    return h


_sequence_kernel = pick(_sequence_jit, _sequence_numpy)


def sequence_final_state(layer: RnnLayer, xs, c0=None, use=None) -> np.ndarray:
    """Final hidden vector for a single ``(T, Nx)`` sequence.

    Uses the numba kernel unless disabled; ``use`` forces ``"numba"`` or
    ``"numpy"`` (for benchmarking).
    """
    dt = layer.w.dtype
    xs = np.ascontiguousarray(xs, dtype=dt)
    c0 = np.zeros(layer.n_hidden, dt) if c0 is None else np.asarray(c0, dt)
    p = layer.p if layer.p is not None else np.zeros((3, layer.n_hidden), dt)
    fn = {"numba": _sequence_jit, "numpy": _sequence_numpy}.get(use, _sequence_kernel)
    code = _CELL_CODE[layer.cell_type]
    return fn(code, layer.w, layer.u, layer.b, p, xs, c0)


def stack_final_state(layers, xs, c0=None, use=None) -> np.ndarray:
    """Final hidden vector of a stack of layers on a single sequence."""
    if len(layers) == 1:
        return sequence_final_state(layers[0], xs, c0, use)
    seq = np.asarray(xs, dtype=layers[0].w.dtype)
    for layer in layers:
        seq = layer_forward(layer, seq, c0=c0)
    return seq[-1]


# --------------------------------------------------------------------------
# PCA


@dataclass(eq=False)
class PcaBasis:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray = field(default=None)  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def astype(self, dtype) -> "PcaBasis":
        ev = None if self.explained_variance is None else self.explained_variance.astype(dtype)
        return PcaBasis(self.mean.astype(dtype), self.components.astype(dtype), ev)


def pca_fit(data, k: int) -> PcaBasis:
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if k > d:
        raise ValueError(f"k={k} exceeds data dimension {d}")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    mean = data.mean(axis=0)
    x = data - mean
    cov = x.T @ x / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(k), lead])[:, None]
    return PcaBasis(mean, comps, np.maximum(vals[order], 0.0))


def pca_transform(basis: PcaBasis, v) -> np.ndarray:
    v = np.asarray(v)
    return (v - basis.mean) @ basis.components.T


def pca_inverse(basis: PcaBasis, y) -> np.ndarray:
    return np.asarray(y) @ basis.components + basis.mean


# --------------------------------------------------------------------------
# HBE1 weight container: b"HBE1" | u32 LE header length | JSON header | f32 LE row-major blobs

MAGIC = b"HBE1"


def dump_arrays(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {"format": "HBE1", "version": 1, "byteorder": "little", "dtype": "f32",
              "meta": meta or {}, "arrays": entries}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(hb)))
    out.write(hb)
    for b in blobs:
        out.write(b)
    return out.getvalue()


def parse_arrays(data: bytes):
    if data[:4] != MAGIC:
        raise ValueError("not an HBE1 weight file (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen])
    if header.get("version") != 1 or header.get("dtype") != "f32":
        raise ValueError(f"unsupported HBE1 header: version={header.get('version')} dtype={header.get('dtype')}")
    base = 8 + hlen
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        if start + 4 * n > len(data):
            raise ValueError(f"HBE1 file truncated in array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(data, dtype="<f4", count=n, offset=start).reshape(e["shape"]).copy()
    return header["meta"], arrays


def save_arrays(path, arrays, meta=None) -> None:
    Path(path).write_bytes(dump_arrays(arrays, meta))


def load_arrays(path):
    return parse_arrays(Path(path).read_bytes())


def layer_arrays(prefix: str, layer: RnnLayer) -> dict[str, np.ndarray]:
    """Per-gate matrices, named ``<prefix>.<gate>.{w,u,b}`` (+ ``p_<gate>``)."""
    out = {}
    for g in GATES[layer.cell_type]:
        w, u, b = layer.gate(g)
        out[f"{prefix}.{g}.w"] = w
        out[f"{prefix}.{g}.u"] = u
        out[f"{prefix}.{g}.b"] = b
    if layer.p is not None:
        for k, g in enumerate(("f", "i", "o")):
            out[f"{prefix}.p_{g}"] = layer.p[k]
    return out


def layer_from_arrays(prefix: str, cell_type: str, arrays) -> RnnLayer:
    gates = GATES[cell_type]
    w = np.concatenate([arrays[f"{prefix}.{g}.w"] for g in gates], axis=0)
    u = np.concatenate([arrays[f"{prefix}.{g}.u"] for g in gates], axis=0)
    b = np.concatenate([arrays[f"{prefix}.{g}.b"] for g in gates], axis=0)
    p = None
    if cell_type == "peephole":
        p = np.stack([arrays[f"{prefix}.p_{g}"] for g in ("f", "i", "o")])
    return RnnLayer(cell_type, w, u, b, p)
