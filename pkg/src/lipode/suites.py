"""Randomized property suites behind ``lipode verify-props``.

Each suite draws admissible samples, evaluates the models and counts the
samples that break a stated bound. A suite passes with zero violations.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, Optional

import numpy as np

from .certify import prop_constants
from .errors import InvalidArgumentError
from .lipfun import (
    build_cover,
    check_membership,
    cover_log_bound,
    embed_weights,
    lipschitz_constant,
    nearest_member,
    norm_1_inf,
    random_param_function,
    sup_distance,
    within,
)
from .numerics import RELU, TANH
from .odeflow import IntegrationConfig, integrate, random_ridge_field, sigma_basis_field
from .resnet import (
    ResNetModel,
    WeightTensor,
    backward,
    build_model,
    check_class,
    forward,
    norm_11_inf,
    penalty_gradient,
    random_class_member,
    weight_lipschitz,
)
from .types import LogFn, ParamClassSpec, WeightClassSpec

SUITE_NAMES = ("prop2", "prop5", "isometry", "gradients", "cover")
EXACT_TOL = 1e-12
GRADIENT_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class SuiteResult:
    suite: str
    samples: int
    seed: int
    violations: Dict[str, int] = field(default_factory=dict)
    worst: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    @property
    def passed(self) -> bool:
        return self.total_violations == 0

    def record(self, check: str, ok: bool, ratio: float = math.nan) -> None:
        """Count one evaluation of ``check``; ``ratio`` is measured / allowed."""
        self.violations[check] = self.violations.get(check, 0) + (0 if ok else 1)
        if not math.isnan(ratio):
            self.worst[check] = max(self.worst.get(check, -math.inf), ratio)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _ball_point(d: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v) * radius * rng.uniform(0.0, 1.0) ** (1.0 / d)


def _ratio(measured: float, allowed: float) -> float:
    return measured / allowed if allowed > 0 else (0.0 if measured == 0 else math.inf)


def prop2_suite(
    samples: int = 1000,
    seed: int = 0,
    steps: int = 512,
    max_m: int = 4,
    max_d: int = 8,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    """Output and parameter-Lipschitz bounds of the parameterized ODE (rk4)."""
    log = log or (lambda _m: None)
    rng = np.random.default_rng(seed)
    res = SuiteResult("prop2", samples, seed)
    cfg = IntegrationConfig(steps, "rk4")
    for i in range(samples):
        m = int(rng.integers(1, max_m + 1))
        d = int(rng.integers(1, max_d + 1))
        spec = ParamClassSpec(
            m=m,
            r_theta=float(rng.uniform(1.0, 2.0)),
            k_theta=float(rng.uniform(0.0, 2.0)),
            k_f=1.0,
            sup_f=1.0,
            r_x=1.0,
            r_y=1.0,
            k_loss=1.0,
        )
        consts = prop_constants(spec)
        vf = random_ridge_field(d, m, spec.k_f, spec.sup_f, rng)
        theta = random_param_function(m, spec.r_theta, spec.k_theta, rng)
        other = random_param_function(m, spec.r_theta, spec.k_theta, rng)
        x = _ball_point(d, spec.r_x, rng)

        inside = check_membership(theta, spec).member
        res.record("sample_in_class", inside and check_membership(other, spec).member)
        y = integrate(vf, theta, x, cfg)
        y_other = integrate(vf, other, x, cfg)

        out_norm = float(np.linalg.norm(y))
        res.record(
            "output_bound",
            within(out_norm, consts.output_bound),
            _ratio(out_norm, consts.output_bound),
        )
        allowed = consts.lipschitz * sup_distance(theta, other)
        moved = float(np.linalg.norm(y - y_other))
        res.record(
            "parameter_lipschitz", within(moved, allowed), _ratio(moved, allowed)
        )
        if (i + 1) % 100 == 0:
            log(f"prop2: {i + 1}/{samples} samples, {res.total_violations} violations")
    return res


def prop5_suite(
    samples: int = 1000,
    seed: int = 0,
    max_d: int = 8,
    max_L: int = 64,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    """Output and parameter-Lipschitz bounds of the residual network."""
    log = log or (lambda _m: None)
    rng = np.random.default_rng(seed)
    res = SuiteResult("prop5", samples, seed)
    for i in range(samples):
        d = int(rng.integers(1, max_d + 1))
        depth = int(rng.integers(1, max_L + 1))
        r_w = float(rng.uniform(0.5, 2.0))
        act = RELU if rng.uniform() < 0.5 else TANH
        w = random_class_member(depth, d, r_w, rng)
        w_other = random_class_member(depth, d, r_w, rng)
        k_w = depth * max(weight_lipschitz(w), weight_lipschitz(w_other))
        spec = WeightClassSpec(d, depth, r_w, k_w, act.lipschitz, 1.0, 1.0, 1.0)
        consts = prop_constants(spec)
        x = _ball_point(d, spec.r_x, rng)

        inside = check_class(w, spec).member and check_class(w_other, spec).member
        res.record("sample_in_class", inside)
        y = forward(ResNetModel(w, activation=act), x).output
        y_other = forward(ResNetModel(w_other, activation=act), x).output

        out_norm = float(np.linalg.norm(y))
        res.record(
            "output_bound",
            within(out_norm, consts.output_bound),
            _ratio(out_norm, consts.output_bound),
        )
        allowed = consts.lipschitz * norm_11_inf(w - w_other)
        moved = float(np.linalg.norm(y - y_other))
        res.record(
            "parameter_lipschitz", within(moved, allowed), _ratio(moved, allowed)
        )
        if (i + 1) % 100 == 0:
            log(f"prop5: {i + 1}/{samples} samples, {res.total_violations} violations")
    return res


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= EXACT_TOL * max(1.0, abs(a), abs(b))


def isometry_suite(
    samples: int = 100,
    seed: int = 0,
    max_d: int = 6,
    max_L: int = 64,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    """The weight embedding preserves norms, is linear, and its Euler flow is
    the residual network."""
    log = log or (lambda _m: None)
    rng = np.random.default_rng(seed)
    res = SuiteResult("isometry", samples, seed)
    for i in range(samples):
        d = int(rng.integers(1, max_d + 1))
        depth = int(rng.integers(1, max_L + 1))
        w = WeightTensor(rng.standard_normal((depth, d, d)))
        w_other = WeightTensor(rng.standard_normal((depth, d, d)))
        phi = embed_weights(w)

        norm_w = norm_11_inf(w)
        res.record("norm", _close(norm_1_inf(phi), norm_w))
        lip_w = depth * weight_lipschitz(w)
        res.record("lipschitz", _close(lipschitz_constant(phi), lip_w))

        a, b = rng.standard_normal(2)
        combo = embed_weights(WeightTensor(a * w.layers + b * w_other.layers))
        joint = embed_weights(w).values * a + embed_weights(w_other).values * b
        gap = float(np.abs(combo.values - joint).max())
        res.record("linearity", gap <= EXACT_TOL * max(1.0, float(np.abs(joint).max())))

        act = RELU if rng.uniform() < 0.5 else TANH
        x = rng.standard_normal(d)
        net = forward(ResNetModel(w, activation=act), x).output
        flow = integrate(sigma_basis_field(d, act), phi, x, IntegrationConfig(depth))
        allowed = EXACT_TOL * max(1.0, float(np.abs(net).max()))
        err = float(np.abs(net - flow).max())
        res.record("euler_equals_resnet", err <= allowed, err / allowed)
        if (i + 1) % 25 == 0:
            log(f"isometry: {i + 1}/{samples} tensors")
    return res


def _perturbed(model: ResNetModel, target: str, index, delta: float) -> ResNetModel:
    if target == "core":
        layers = np.array(model.core.layers)
        layers[index] += delta
        return replace(model, core=WeightTensor(layers))
    mat = np.array(getattr(model, target))
    mat[index] += delta
    return replace(model, **{target: mat})


def _relative_error(exact: np.ndarray, approx: np.ndarray) -> np.ndarray:
    # coordinates far below the largest gradient entry are compared against it
    floor = max(1e-3 * float(np.abs(exact).max(initial=0.0)), 1e-12)
    return np.abs(exact - approx) / np.maximum(
        np.maximum(np.abs(exact), np.abs(approx)), floor
    )


def _near_max_tie(w: WeightTensor, gap: float) -> bool:
    """Whether some layer difference has its two largest |entries| within gap."""
    diffs = np.sort(np.abs(np.diff(w.layers, axis=0)).reshape(w.L - 1, -1), axis=1)
    return diffs.shape[1] > 1 and bool((diffs[:, -1] - diffs[:, -2] < gap).any())


def gradients_suite(
    samples: int = 50,
    seed: int = 0,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    """backward and the penalty subgradients against central differences,
    every coordinate of the sampled array."""
    log = log or (lambda _m: None)
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradients", samples, seed)
    targets = ("core", "input_proj", "output_proj", "penalty")
    for i in range(samples):
        p, d, q = (int(v) for v in rng.integers(2, 6, size=3))
        depth = int(rng.integers(2, 9))
        model = build_model(
            p, d, q, depth, activation=TANH, init="iid", seed=int(rng.integers(2**31))
        )
        x = rng.standard_normal(p)
        u = rng.standard_normal(q)
        target = targets[i % len(targets)]

        if target == "penalty":
            kind = ("frob_l2", "maxnorm_l2")[int(rng.integers(2))]
            # the max-norm is not differentiable where two entries tie
            if kind == "maxnorm_l2" and _near_max_tie(model.core, 10 * FD_STEP):
                kind = "frob_l2"
            _, exact = penalty_gradient(model.core, kind)

            def value(mdl: ResNetModel) -> float:
                return penalty_gradient(mdl.core, kind)[0]

            wrt = "core"
        else:
            grads = backward(model, forward(model, x), u)
            exact = np.asarray(getattr(grads, target))

            def value(mdl: ResNetModel) -> float:
                return float(forward(mdl, x).output @ u)

            wrt = target

        approx = np.empty_like(exact)
        for index in np.ndindex(*exact.shape):
            up = value(_perturbed(model, wrt, index, FD_STEP))
            down = value(_perturbed(model, wrt, index, -FD_STEP))
            approx[index] = (up - down) / (2.0 * FD_STEP)
        err = float(_relative_error(exact, approx).max())
        res.record(target, err <= GRADIENT_TOL, err / GRADIENT_TOL)
    log(f"gradients: {samples} samples, {res.total_violations} violations")
    return res


DEFAULT_COVER_TRIPLES = (
    (1.0, 1.0, 1.0),
    (1.0, 2.0, 0.25),
    (1.0, 1.0, 0.5),
    (2.0, 1.0, 0.5),
    (1.0, 0.0, 0.1),
    (0.5, 3.0, 0.5),
)


def cover_suite(
    samples: int = 200,
    seed: int = 0,
    R: float = 1.0,
    K: float = 2.0,
    eps: float = 0.25,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    """Random admissible functions lie within eps of the grid cover, and the
    cover size respects the log covering bound."""
    log = log or (lambda _m: None)
    rng = np.random.default_rng(seed)
    res = SuiteResult("cover", samples, seed)
    cover = build_cover(R, K, eps)
    for _ in range(samples):
        f = random_param_function(1, R, K, rng)
        _, dist = nearest_member(cover, f)
        res.record("within_eps", within(dist, eps), dist / eps)

    sizes = {}
    for r, k, e in DEFAULT_COVER_TRIPLES:
        measured = math.log(len(build_cover(r, k, e)))
        bound = cover_log_bound(1, r, k, e)
        res.record("log_size", measured <= bound, _ratio(measured, bound))
        sizes[f"R={r:g} K={k:g} eps={e:g}"] = {"log_size": measured, "bound": bound}
    res.details["members"] = len(cover)
    res.details["sizes"] = sizes
    log(f"cover: {len(cover)} members, {res.total_violations} violations")
    return res


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    "prop2": prop2_suite,
    "prop5": prop5_suite,
    "isometry": isometry_suite,
    "gradients": gradients_suite,
    "cover": cover_suite,
}


def run_suite(
    name: str,
    samples: Optional[int] = None,
    seed: int = 0,
    log: Optional[LogFn] = None,
) -> SuiteResult:
    try:
        suite = SUITES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"suite must be one of {', '.join(SUITE_NAMES)}, got {name!r}"
        ) from None
    if samples is None:
        return suite(seed=seed, log=log)
    if samples < 1:
        raise InvalidArgumentError(f"samples must be >= 1: {samples}")
    return suite(samples=samples, seed=seed, log=log)
