"""Closed-form generalization certificates.

Every function returns a :class:`BoundReport`; a violated precondition never
raises, it marks the report invalid and names the failing check.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError
from .numerics import norm_21, spectral_norm
from .resnet import ResNetModel, WeightTensor, norm_11_inf, weight_lipschitz
from .types import NeuralOdeSpec, ParamClassSpec, WeightClassSpec

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
# ||softmax(z) - onehot(y)||_2 <= sqrt(2): Lipschitz constant of cross-entropy in z.
CROSS_ENTROPY_K_LOSS = SQRT2


@dataclass(frozen=True)
class Term:
    name: str
    value: float


@dataclass(frozen=True)
class Precondition:
    name: str
    satisfied: bool
    measured: float
    required: float
    relation: str = ">="


@dataclass(frozen=True)
class BoundReport:
    bound_name: str
    B: float
    terms: List[Term]
    total: float
    preconditions: List[Precondition]
    inputs_echo: Dict[str, Any]
    notes: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(p.satisfied for p in self.preconditions)

    def term(self, name: str) -> float:
        for t in self.terms:
            if t.name == name:
                return t.value
        raise KeyError(name)

    def failing(self) -> List[str]:
        return [p.name for p in self.preconditions if not p.satisfied]

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["valid"] = self.valid
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(o: Any) -> Any:
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _report(
    name: str,
    B: float,
    terms: List[Term],
    pre: List[Precondition],
    echo: Dict[str, Any],
    notes: Optional[List[str]] = None,
) -> BoundReport:
    total = math.fsum(t.value for t in terms)
    return BoundReport(name, B, terms, total, pre, echo, list(notes or []))


def _common_pre(n: float, delta: float, n_min: float) -> List[Precondition]:
    return [
        Precondition("n_threshold", n >= n_min, float(n), float(n_min), ">="),
        Precondition("delta_upper", 0.0 < delta < 1.0, float(delta), 1.0, "<"),
    ]


def _sqrt_log_over_n(arg: float, n: float) -> float:
    # sqrt(log(arg) / n), NaN when the log is negative
    if n <= 0 or arg <= 0:
        return math.nan
    val = math.log(arg) / n
    return math.sqrt(val) if val >= 0 else math.nan


def _confidence(B: float, n: float, delta: float) -> float:
    if n <= 0 or not 0.0 < delta < 1.0:
        return math.nan
    return B / math.sqrt(n) * math.sqrt(math.log(1.0 / delta))


def bound_param_ode(spec: ParamClassSpec, n: float, delta: float) -> BoundReport:
    """Generalization bound for the parameterized ODE class Theta."""
    m, R, K = spec.m, spec.r_theta, spec.k_theta
    grow = math.exp(spec.k_f * R)
    reach = spec.r_x + spec.sup_f * R * grow + spec.r_y
    B = 6.0 * spec.k_loss * spec.k_f * grow * reach
    n_min = 9.0 * max(1.0 / (m * m * R * R), 1.0)
    root = _sqrt_log_over_n(R * m * n, n)
    terms = [
        Term("complexity", B * math.sqrt(m + 1) * root),
        Term(
            "parameter_lipschitz",
            B * m * math.sqrt(K) / n**0.25 if n > 0 else math.nan,
        ),
        Term("confidence", _confidence(B, n, delta)),
    ]
    notes = []
    if K == 0:
        notes.append("K_theta = 0: time-independent class, O(n^-1/2) rate")
    return _report(
        "param_ode",
        B,
        terms,
        _common_pre(n, delta, n_min),
        {"spec": asdict(spec), "n": n, "delta": delta},
        notes,
    )


def bound_neural_ode(spec: NeuralOdeSpec, n: float, delta: float) -> BoundReport:
    """Bound for the time-independent neural ODE dH = W sigma(H) dt, m = d^2."""
    d, R = spec.d, spec.r_w
    grow = math.exp(spec.k_sigma * R)
    B = 6.0 * SQRT2 * spec.k_loss * spec.k_sigma * grow * (
        spec.r_x + spec.sup_f * R * grow + spec.r_y
    )
    n_min = 9.0 / R * max(1.0 / (d**4 * R), 1.0)
    terms = [
        Term("complexity", B * (d + 1) * _sqrt_log_over_n(R * d * n, n)),
        Term("confidence", _confidence(B, n, delta)),
    ]
    return _report(
        "neural_ode",
        B,
        terms,
        _common_pre(n, delta, n_min),
        {"spec": asdict(spec), "n": n, "delta": delta},
        ["time-independent weights: no n^-1/4 term"],
    )


def bound_resnet(spec: WeightClassSpec, n: float, delta: float) -> BoundReport:
    """Depth-independent bound for the residual network class."""
    d, R = spec.d, spec.r_w
    grow = math.exp(spec.k_sigma * R)
    B = 6.0 * SQRT2 * spec.k_loss * max(grow / R, 1.0) * (spec.r_x * grow + spec.r_y)
    n_min = 9.0 / R * max(1.0 / (d**4 * R), 1.0)
    terms = [
        Term("complexity", B * (d + 1) * _sqrt_log_over_n(R * d * n, n)),
        Term(
            "weight_lipschitz",
            B * d * d * math.sqrt(spec.k_w) / n**0.25 if n > 0 else math.nan,
        ),
        Term("confidence", _confidence(B, n, delta)),
    ]
    notes = ["the depth L does not appear in the bound"]
    if spec.k_w == 0:
        notes.append("K_W = 0: weight-tied class, the n^-1/4 term vanishes")
    return _report(
        "resnet",
        B,
        terms,
        _common_pre(n, delta, n_min),
        {"spec": asdict(spec), "n": n, "delta": delta},
        notes,
    )


def resnet_cover_log_bound(d: int, r_w: float, k_w: float, eps: float) -> float:
    """log covering number bound of the residual class in the (1,1,inf)-norm."""
    if not r_w > 0 or not eps > 0 or k_w < 0 or d < 1:
        raise InvalidArgumentError("need d >= 1, r_w > 0, k_w >= 0, eps > 0")
    return d * d * math.log(16.0 * d * d * r_w / eps) + d**4 * k_w * math.log(4.0) / eps


def log_a_of_w(w: WeightTensor) -> float:
    """log A(W), the spectral complexity with identity reference matrices.

    A(W) = prod_k ||I + W_k/L|| * (sum_k ||W_k^T||_{2,1}^{2/3}
           / (L^{2/3} ||I + W_k/L||^{2/3}))^{3/2}
    """
    depth, d = w.L, w.d
    eye = np.eye(d)
    log_prod = 0.0
    acc = 0.0
    for k in range(depth):
        layer = w.layers[k]
        try:
            s = spectral_norm(eye + layer / depth, max_iters=10000)
        except ConvergenceError as e:
            logger.warning(
                "layer %d: using last power iterate %g", k + 1, e.last_iterate
            )
            s = float(e.last_iterate)
        log_prod += math.log(s)
        acc += (norm_21(layer.T) / (depth * s)) ** (2.0 / 3.0)
    if acc == 0.0:
        return -math.inf
    return log_prod + 1.5 * math.log(acc)


def bound_bartlett(
    source: Union[WeightTensor, WeightClassSpec],
    r_x: float,
    gamma: float,
    n: float,
    delta: float,
    k_sigma: Optional[float] = None,
) -> BoundReport:
    """Spectrally-normalized margin bound for the same residual class.

    The universal constant C is unknown and reported as C = 1, so only the
    shape (growth in L, d, n) of the result is meaningful. The bound is stated
    for 1-Lipschitz activations: ``k_sigma`` (taken from a class spec when not
    given) must be 1.
    """
    if k_sigma is None:
        k_sigma = 1.0 if isinstance(source, WeightTensor) else source.k_sigma
    if k_sigma != 1.0:
        raise InvalidArgumentError(
            f"the margin bound needs a 1-Lipschitz activation (k_sigma={k_sigma})"
        )
    if isinstance(source, WeightTensor):
        depth, d = source.L, source.d
        r_w = norm_11_inf(source)
        log_a = log_a_of_w(source)
        a_value = math.exp(log_a) if log_a > -math.inf else 0.0
        variant = "tensor"
    else:
        depth, d, r_w = source.L, source.d, source.r_w
        a_value = 2.0 * r_w * math.exp(r_w) * math.sqrt(depth)
        variant = "spec"
    pre = [
        Precondition("depth_vs_radius", depth >= r_w, float(depth), float(r_w), ">="),
        Precondition("gamma_positive", gamma > 0, float(gamma), 0.0, ">"),
        Precondition("delta_upper", 0.0 < delta < 1.0, float(delta), 1.0, "<"),
    ]
    margin = (
        r_x * a_value * math.log(d) / (gamma * math.sqrt(n))
        if gamma > 0 and n > 0
        else math.nan
    )
    terms = [
        Term("spectral_margin", margin),
        Term("confidence", _confidence(1.0, n, delta)),
    ]
    echo = {
        "variant": variant,
        "L": depth,
        "d": d,
        "r_w": r_w,
        "r_x": r_x,
        "gamma": gamma,
        "n": n,
        "delta": delta,
        "A": a_value,
    }
    return _report(
        "bartlett",
        1.0,
        terms,
        pre,
        echo,
        ["shape-only comparison: universal constant C reported as 1"],
    )


@dataclass(frozen=True)
class GolowichDiagnostic:
    log_product: float  # log prod_k ||I + W_k/L||_F
    log_lower_bound: float  # L log(sqrt(d) - R_W/L), NaN when undefined
    log_approximation: float  # (L/2) log d - R_W / sqrt(d)
    lower_bound_defined: bool
    r_w: float


def golowich_product(w: WeightTensor) -> GolowichDiagnostic:
    """Product of the Frobenius norms of the residual maps I + W_k/L."""
    depth, d = w.L, w.d
    eye = np.eye(d)
    log_prod = math.fsum(
        math.log(float(np.linalg.norm(eye + w.layers[k] / depth))) for k in range(depth)
    )
    r_w = norm_11_inf(w)
    base = math.sqrt(d) - r_w / depth
    defined = base > 0
    lower = depth * math.log(base) if defined else math.nan
    approx = 0.5 * depth * math.log(d) - r_w / math.sqrt(d)
    return GolowichDiagnostic(log_prod, lower, approx, defined, r_w)


@dataclass(frozen=True)
class PropConstants:
    output_bound: float
    lipschitz: float


def prop_constants(spec: Union[ParamClassSpec, WeightClassSpec]) -> PropConstants:
    """Output bound and parameter-Lipschitz constant of the model class."""
    if isinstance(spec, ParamClassSpec):
        R, kf, M = spec.r_theta, spec.k_f, spec.sup_f
        return PropConstants(
            output_bound=spec.r_x + M * R * math.exp(kf * R),
            lipschitz=2.0 * M * kf * R * math.exp(2.0 * kf * R),
        )
    if isinstance(spec, WeightClassSpec):
        R, ks = spec.r_w, spec.k_sigma
        return PropConstants(
            output_bound=spec.r_x * math.exp(ks * R),
            lipschitz=spec.r_x / R * math.exp(2.0 * ks * R),
        )
    raise InvalidArgumentError(f"unsupported spec type {type(spec).__name__}")


def weight_class_from_model(
    model: ResNetModel,
    r_x: float,
    r_y: float,
    k_loss: Optional[float] = None,
) -> Tuple[WeightClassSpec, List[str]]:
    """The smallest class containing the model's core, plus explanatory notes.

    K_loss defaults to sqrt(2), the Lipschitz constant of cross-entropy over
    softmax in the logits.
    """
    notes = []
    if k_loss is None:
        k_loss = CROSS_ENTROPY_K_LOSS
        notes.append("k_loss defaulted to sqrt(2) (cross-entropy over softmax)")
    core = model.core
    spec = WeightClassSpec(
        d=core.d,
        L=core.L,
        r_w=max(norm_11_inf(core), 1e-12),
        k_w=weight_lipschitz(core) * core.L,
        k_sigma=model.activation.lipschitz,
        r_x=r_x,
        r_y=r_y,
        k_loss=k_loss,
    )
    return spec, notes
