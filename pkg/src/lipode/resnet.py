"""Deep residual network

    H_0 = A x,   H_{k+1} = H_k + (1/L) W_{k+1} sigma(H_k),   F(x) = B H_L,

with reverse-mode gradients, smooth-in-depth and i.i.d. initializations, the
weight-difference penalties and the class-membership measurements.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import (
    DivergenceError,
    FormatError,
    InvalidArgumentError,
    InvalidStateError,
)
from .lipfun import within
from .numerics import RELU, Activation, GpPathSpec, sample_gp_paths
from .spec_store import atomic_write
from .types import PENALTY_KINDS, WeightClassSpec

MAGIC = b"ODRN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class WeightTensor:
    """Stack of L square layers W_1..W_L.

    A weight-tied tensor stores one matrix; ``layers`` is then a read-only
    broadcast view of it.
    """

    layers: np.ndarray = field(repr=False)
    weight_tied: bool = False

    def __post_init__(self) -> None:
        a = np.asarray(self.layers, dtype=np.float64)
        if a.ndim != 3 or a.shape[0] < 1 or a.shape[1] != a.shape[2] or a.shape[1] < 1:
            raise InvalidArgumentError(f"expected an (L, d, d) tensor, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("weight tensor has non-finite entries")
        if self.weight_tied:
            if not np.all(a == a[0]):
                raise InvalidArgumentError("weight-tied tensor with unequal layers")
            shared = np.array(a[0], copy=True)
            shared.setflags(write=False)
            a = np.broadcast_to(shared, a.shape)
        else:
            a = np.array(a, copy=True)
            a.setflags(write=False)
        object.__setattr__(self, "layers", a)

    @property
    def L(self) -> int:
        return int(self.layers.shape[0])

    @property
    def d(self) -> int:
        return int(self.layers.shape[1])

    @property
    def shared(self) -> np.ndarray:
        return self.layers[0]

    def __add__(self, other: "WeightTensor") -> "WeightTensor":
        return WeightTensor(self.layers + other.layers)

    def __sub__(self, other: "WeightTensor") -> "WeightTensor":
        return WeightTensor(self.layers - other.layers)


def tied_tensor(matrix, L: int) -> WeightTensor:
    m = np.asarray(matrix, dtype=np.float64)
    return WeightTensor(np.broadcast_to(m, (L, *m.shape)), weight_tied=True)


def tie_weights(w: WeightTensor) -> WeightTensor:
    """Weight-tied tensor sharing the mean layer of ``w``."""
    return tied_tensor(w.layers.mean(axis=0), w.L)


def scale_tensor(w: WeightTensor, c: float) -> WeightTensor:
    return WeightTensor(c * w.layers, weight_tied=w.weight_tied)


@dataclass(frozen=True)
class ResNetModel:
    core: WeightTensor
    input_proj: Optional[np.ndarray] = field(default=None, repr=False)  # A, d x p
    output_proj: Optional[np.ndarray] = field(default=None, repr=False)  # B, q x d
    activation: Activation = RELU
    train_projections: bool = True

    def __post_init__(self) -> None:
        d = self.core.d
        if self.input_proj is not None:
            a = np.asarray(self.input_proj, dtype=np.float64)
            if a.ndim != 2 or a.shape[0] != d:
                raise InvalidArgumentError(f"A must be {d} x p, got {a.shape}")
            object.__setattr__(self, "input_proj", a)
        if self.output_proj is not None:
            b = np.asarray(self.output_proj, dtype=np.float64)
            if b.ndim != 2 or b.shape[1] != d:
                raise InvalidArgumentError(f"B must be q x {d}, got {b.shape}")
            object.__setattr__(self, "output_proj", b)

    @property
    def L(self) -> int:
        return self.core.L

    @property
    def d(self) -> int:
        return self.core.d

    @property
    def p(self) -> int:
        return self.d if self.input_proj is None else int(self.input_proj.shape[1])

    @property
    def q(self) -> int:
        return self.d if self.output_proj is None else int(self.output_proj.shape[0])


@dataclass(frozen=True)
class ForwardTrace:
    inputs: np.ndarray  # (n, p)
    states: np.ndarray  # (L + 1, n, d): H_0 .. H_L
    output: np.ndarray  # (q,) for a single input, (n, q) for a batch
    batched: bool


@dataclass(frozen=True)
class Gradients:
    core: np.ndarray  # (L, d, d), or (d, d) for a weight-tied core
    input_proj: Optional[np.ndarray]
    output_proj: Optional[np.ndarray]
    inputs: np.ndarray


def forward(model: ResNetModel, x) -> ForwardTrace:
    xs = np.asarray(x, dtype=np.float64)
    batched = xs.ndim == 2
    xs = np.atleast_2d(xs)
    if xs.shape[1] != model.p:
        raise InvalidArgumentError(
            f"input has width {xs.shape[1]}, model expects {model.p}"
        )
    depth = model.L
    act = model.activation.fn
    h = xs if model.input_proj is None else xs @ model.input_proj.T
    states = np.empty((depth + 1, *h.shape))
    states[0] = h
    for k in range(depth):
        h = h + (1.0 / depth) * (act(h) @ model.core.layers[k].T)
        if not np.all(np.isfinite(h)):
            raise DivergenceError(f"non-finite activation at layer {k + 1}", step=k + 1)
        states[k + 1] = h
    out = h if model.output_proj is None else h @ model.output_proj.T
    return ForwardTrace(xs, states, out if batched else out[0], batched)


def backward(
    model: ResNetModel, trace: Optional[ForwardTrace], upstream
) -> Gradients:
    """Gradients of <output, upstream> w.r.t. every W_k, A, B and the input."""
    if trace is None:
        raise InvalidStateError("backward needs the trace of a forward pass")
    depth = model.L
    if trace.states.shape[0] != depth + 1 or trace.states.shape[2] != model.d:
        raise InvalidStateError("trace does not belong to this model")
    u = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if u.shape != (trace.states.shape[1], model.q):
        raise InvalidArgumentError(f"upstream has shape {u.shape}")

    act = model.activation
    h_last = trace.states[depth]
    if model.output_proj is None:
        g, d_out = u, None
    else:
        d_out = u.T @ h_last
        g = u @ model.output_proj
    d_core = np.empty((depth, model.d, model.d))
    for k in range(depth - 1, -1, -1):
        hk = trace.states[k]
        w = model.core.layers[k]
        d_core[k] = (g.T @ act.fn(hk)) / depth
        g = g + ((g @ w) * act.deriv(hk)) / depth
    if model.input_proj is None:
        d_in, d_x = None, g
    else:
        d_in = g.T @ trace.inputs
        d_x = g @ model.input_proj
    core = d_core.sum(axis=0) if model.core.weight_tied else d_core
    return Gradients(core, d_in, d_out, d_x if trace.batched else d_x[0])


def smooth_init(
    L: int, d: int, bandwidth: float = 0.1, seed: int = 0, jitter: float = 1e-8
) -> WeightTensor:
    """W_{k,i,j} = f_ij(k/L) / sqrt(d), the f_ij independent RBF-kernel GPs."""
    if L < 1 or d < 1:
        raise InvalidArgumentError(f"L and d must be >= 1 (L={L}, d={d})")
    paths = sample_gp_paths(GpPathSpec(L, bandwidth, jitter, seed), d * d)
    return WeightTensor(paths.T.reshape(L, d, d) / math.sqrt(d))


def iid_init(L: int, d: int, scale: float = 1.0, seed: int = 0) -> WeightTensor:
    """i.i.d. N(0, scale^2 / d) entries: successive layers stay O(1) apart."""
    if L < 1 or d < 1:
        raise InvalidArgumentError(f"L and d must be >= 1 (L={L}, d={d})")
    rng = np.random.default_rng(seed)
    return WeightTensor(rng.normal(0.0, scale / math.sqrt(d), size=(L, d, d)))


def projection_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(0, 1/cols) entries."""
    return rng.normal(0.0, 1.0 / math.sqrt(cols), size=(rows, cols))


def build_model(
    p: int,
    d: int,
    q: int,
    L: int,
    *,
    activation: Activation = RELU,
    init: str = "smooth",
    bandwidth: float = 0.1,
    seed: int = 0,
    train_projections: bool = True,
    weight_tied: bool = False,
) -> ResNetModel:
    core_seed, proj_seed = np.random.SeedSequence(seed).generate_state(2)
    if init == "smooth":
        core = smooth_init(L, d, bandwidth=bandwidth, seed=int(core_seed))
    elif init == "iid":
        core = iid_init(L, d, seed=int(core_seed))
    else:
        raise InvalidArgumentError(f"unknown init {init!r}")
    if weight_tied:
        core = tie_weights(core)
    rng = np.random.default_rng(int(proj_seed))
    return ResNetModel(
        core=core,
        input_proj=projection_init(d, p, rng),
        output_proj=projection_init(q, d, rng),
        activation=activation,
        train_projections=train_projections,
    )


def norm_11_inf(w: WeightTensor) -> float:
    """max_k sum_ij |W_k,ij|."""
    return float(np.abs(w.layers).sum(axis=(1, 2)).max())


def weight_lipschitz(w: WeightTensor) -> float:
    """max_k ||W_{k+1} - W_k||_inf (0 for L = 1 or a weight-tied tensor)."""
    if w.L < 2 or w.weight_tied:
        return 0.0
    return float(np.abs(np.diff(w.layers, axis=0)).max())


def penalty_gradient(w: WeightTensor, kind: str) -> Tuple[float, np.ndarray]:
    """Penalty value and a (sub)gradient w.r.t. every layer, shape (L, d, d).

    frob_l2    = (sum_k ||dW_k||_F^2)^(1/2)
    max_max    = max_k ||dW_k||_inf
    maxnorm_l2 = (sum_k ||dW_k||_inf^2)^(1/2)

    Ties in a max resolve to the first index in row-major order.
    """
    if kind not in PENALTY_KINDS:
        raise InvalidArgumentError(f"unknown penalty kind {kind!r}")
    grad = np.zeros(w.layers.shape)
    if w.L < 2 or w.weight_tied:
        return 0.0, grad
    diffs = np.diff(w.layers, axis=0)  # (L-1, d, d)
    g_diff = np.zeros_like(diffs)
    if kind == "frob_l2":
        value = float(np.sqrt((diffs**2).sum()))
        if value > 0:
            g_diff = diffs / value
    else:
        flat = np.abs(diffs).reshape(diffs.shape[0], -1)
        arg = flat.argmax(axis=1)
        peaks = flat[np.arange(flat.shape[0]), arg]
        if kind == "max_max":
            value = float(peaks.max())
            k = int(peaks.argmax())
            weights = np.zeros_like(peaks)
            if value > 0:
                weights[k] = 1.0
        else:
            value = float(np.sqrt((peaks**2).sum()))
            weights = peaks / value if value > 0 else np.zeros_like(peaks)
        rows = np.arange(flat.shape[0])
        g_flat = np.zeros_like(flat)
        signs = np.sign(diffs.reshape(diffs.shape[0], -1)[rows, arg])
        g_flat[rows, arg] = weights * signs
        g_diff = g_flat.reshape(diffs.shape)
    grad[1:] += g_diff
    grad[:-1] -= g_diff
    return value, grad


def penalty(w: WeightTensor, kind: str) -> float:
    return penalty_gradient(w, kind)[0]


@dataclass(frozen=True)
class WeightMembershipReport:
    norm: float  # ||W||_{1,1,inf}
    scaled_lipschitz: float  # L * weight_lipschitz(W)
    norm_ok: bool
    lipschitz_ok: bool

    @property
    def member(self) -> bool:
        return self.norm_ok and self.lipschitz_ok


def check_class(w: WeightTensor, spec: WeightClassSpec) -> WeightMembershipReport:
    if (w.L, w.d) != (spec.L, spec.d):
        raise InvalidArgumentError(
            f"tensor is L={w.L}, d={w.d} but the class is L={spec.L}, d={spec.d}"
        )
    norm = norm_11_inf(w)
    lip = weight_lipschitz(w) * w.L
    return WeightMembershipReport(
        norm=norm,
        scaled_lipschitz=lip,
        norm_ok=within(norm, spec.r_w),
        lipschitz_ok=within(lip, spec.k_w),
    )


def random_class_member(
    L: int, d: int, r_w: float, rng: np.random.Generator, bandwidth: float = 0.1
) -> WeightTensor:
    """smooth_init rescaled so that ||W||_{1,1,inf} = r_w * u, u ~ U(0, 1]."""
    w = smooth_init(L, d, bandwidth=bandwidth, seed=int(rng.integers(2**31)))
    norm = norm_11_inf(w)
    target = r_w * (1.0 - rng.uniform(0.0, 1.0))
    return scale_tensor(w, target / norm) if norm > 0 else w


def weights_to_bytes(w: WeightTensor) -> bytes:
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, w.L, w.d)
    return head + np.ascontiguousarray(w.layers, dtype="<f8").tobytes()


def weights_from_bytes(
    blob: bytes, L: Optional[int] = None, d: Optional[int] = None
) -> WeightTensor:
    if len(blob) < _HEADER.size:
        raise FormatError(
            "truncated header", expected=_HEADER.size, found=len(blob), offset=len(blob)
        )
    magic, version, depth, width = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", expected=MAGIC, found=magic, offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported version {version}",
            expected=FORMAT_VERSION,
            found=version,
            offset=4,
        )
    if (L is not None and depth != L) or (d is not None and width != d):
        raise FormatError(
            f"shape L={depth}, d={width} does not match the expected shape",
            expected=(L, d),
            found=(depth, width),
            offset=8,
        )
    need = _HEADER.size + depth * width * width * 8
    if len(blob) != need:
        raise FormatError(
            f"payload has {len(blob)} bytes, header implies {need}",
            expected=need,
            found=len(blob),
            offset=min(len(blob), need),
        )
    layers = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return WeightTensor(layers.reshape(depth, width, width).astype(np.float64))


def save_weights(w: WeightTensor, path: Path) -> Path:
    return atomic_write(Path(path), weights_to_bytes(w))


def load_weights(
    path: Path, L: Optional[int] = None, d: Optional[int] = None
) -> WeightTensor:
    return weights_from_bytes(Path(path).read_bytes(), L=L, d=d)
