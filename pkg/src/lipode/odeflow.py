"""Forward map of the parameterized ODE

    dH_t = sum_i theta_i(t) f_i(H_t) dt,   H_0 = x,   F_theta(x) = H_1,

and its neural-ODE specialization f_ij(x) = sigma(x_j) e_i, by explicit
fixed-step schemes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .lipfun import ParamFunction, values_at
from .numerics import Activation, as_matrix

DIVERGENCE_LIMIT = 1e12

KINDS = ("generic", "sigma_basis", "linear_test")
SCHEMES = ("euler", "rk4")

Component = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VectorField:
    """The fixed maps f_1..f_m with their common Lipschitz constant K_f and
    their sup bound M on the input ball."""

    d: int
    components: Tuple[Component, ...] = field(repr=False)
    lipschitz: float
    sup_bound: float
    kind: str = "generic"
    activation: Optional[Activation] = field(default=None, repr=False)
    # optional h -> (m, d) evaluation of every component at once
    stacked: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, repr=False
    )

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown vector field kind {self.kind!r}")
        if not self.components:
            raise InvalidArgumentError("a vector field needs at least one component")
        if not (0 < self.lipschitz < np.inf) or not (0 <= self.sup_bound < np.inf):
            raise InvalidArgumentError("tagged constants must be positive and finite")
        if self.kind == "sigma_basis" and self.activation is None:
            raise InvalidArgumentError("a sigma-basis field needs its activation")

    @property
    def m(self) -> int:
        return len(self.components)

    def drift(self, coeffs: np.ndarray, h: np.ndarray) -> np.ndarray:
        """sum_i coeffs_i f_i(h)."""
        if self.kind == "sigma_basis":
            w = coeffs.reshape(self.d, self.d)
            return w @ self.activation.fn(h)
        if self.stacked is not None:
            return coeffs @ self.stacked(h)
        out = np.zeros(self.d)
        for c, f in zip(coeffs, self.components):
            if c != 0.0:
                out = out + c * f(h)
        return out


@dataclass(frozen=True)
class IntegrationConfig:
    steps: int
    scheme: str = "euler"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise InvalidArgumentError(f"steps must be >= 1: {self.steps}")
        if self.scheme not in SCHEMES:
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}")


def _basis_component(i: int, j: int, act: Activation, d: int) -> Component:
    def f(h: np.ndarray) -> np.ndarray:
        out = np.zeros(d)
        out[i] = act.fn(h[j : j + 1])[0]
        return out

    return f


def sigma_basis_field(
    d: int, activation: Activation, sup_bound: Optional[float] = None
) -> VectorField:
    """The d*d maps sigma_ij(x) = sigma(x_j) e_i, ordered row-major in (i, j).

    Without an explicit ``sup_bound`` the tag defaults to 1 (M is a property
    of the input set, which the field does not know).
    """
    if d < 1:
        raise InvalidArgumentError(f"d must be >= 1: {d}")
    comps = tuple(
        _basis_component(i, j, activation, d) for i in range(d) for j in range(d)
    )
    return VectorField(
        d=d,
        components=comps,
        lipschitz=activation.lipschitz,
        sup_bound=1.0 if sup_bound is None else sup_bound,
        kind="sigma_basis",
        activation=activation,
    )


def neural_ode_field(W, activation: Activation) -> VectorField:
    """Field for dH_t = W sigma(H_t) dt.

    Integrating it with the constant path ``constant_function(W.ravel())``
    reproduces the time-independent neural ODE.
    """
    w = as_matrix(W, "W")
    if w.shape[0] != w.shape[1]:
        raise InvalidArgumentError(f"W must be square, got {w.shape}")
    return sigma_basis_field(w.shape[0], activation)


def linear_test_field(d: int = 1) -> VectorField:
    """f(h) = h: with theta = 1 the flow is x * e."""
    return VectorField(
        d=d,
        components=(lambda h: np.asarray(h, dtype=np.float64),),
        lipschitz=1.0,
        sup_bound=1.0,
        kind="linear_test",
    )


def random_ridge_field(
    d: int,
    m: int,
    lipschitz: float,
    sup_bound: float,
    rng: np.random.Generator,
) -> VectorField:
    """m random ridge maps f_i(h) = M tanh(a_i . h + b_i) u_i.

    ||u_i||_2 = 1 and ||a_i||_2 = K_f / M, so each f_i is bounded by M and
    K_f-Lipschitz in the Euclidean norm.
    """
    if d < 1 or m < 1 or not lipschitz > 0 or not sup_bound > 0:
        raise InvalidArgumentError("need d, m >= 1 and positive constants")
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    a = rng.standard_normal((m, d))
    a *= (lipschitz / sup_bound) / np.linalg.norm(a, axis=1, keepdims=True)
    b = rng.uniform(-1.0, 1.0, size=m)

    def stacked(h: np.ndarray) -> np.ndarray:
        return (sup_bound * np.tanh(a @ h + b))[:, None] * u

    def component(i: int) -> Component:
        return lambda h: sup_bound * np.tanh(a[i] @ h + b[i]) * u[i]

    return VectorField(
        d=d,
        components=tuple(component(i) for i in range(m)),
        lipschitz=lipschitz,
        sup_bound=sup_bound,
        stacked=stacked,
    )


def _check(field_: VectorField, theta: ParamFunction, x) -> np.ndarray:
    if theta.m != field_.m:
        raise InvalidArgumentError(
            f"theta has m={theta.m} but the field has {field_.m} components"
        )
    h = np.asarray(x, dtype=np.float64).reshape(-1)
    if h.size != field_.d:
        raise InvalidArgumentError(f"x has length {h.size}, field expects {field_.d}")
    if not np.all(np.isfinite(h)):
        raise InvalidArgumentError("x has non-finite entries")
    return h


def _guard(h: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(h)) or np.linalg.norm(h) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"state diverged at step {step}", step=step)


def _march(
    field_: VectorField, theta: ParamFunction, h: np.ndarray, cfg: IntegrationConfig
) -> np.ndarray:
    n = cfg.steps
    dt = 1.0 / n
    path = np.empty((n + 1, field_.d))
    path[0] = h
    if cfg.scheme == "euler":
        # The residual recursion uses W_{k+1} at step k, i.e. theta((k+1)/L).
        shift = 1 if field_.kind == "sigma_basis" else 0
        table = values_at(theta, (np.arange(n) + shift) / n)
    else:
        # rows 2k, 2k+1, 2k+2 hold theta at t_k, t_k + dt/2 and t_{k+1}
        table = values_at(theta, np.arange(2 * n + 1) / (2 * n))
    for k in range(n):
        if cfg.scheme == "euler":
            h = h + dt * field_.drift(table[k], h)
        else:
            c0, ch, c1 = table[2 * k], table[2 * k + 1], table[2 * k + 2]
            k1 = field_.drift(c0, h)
            k2 = field_.drift(ch, h + 0.5 * dt * k1)
            k3 = field_.drift(ch, h + 0.5 * dt * k2)
            k4 = field_.drift(c1, h + dt * k3)
            h = h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(h, k + 1)
        path[k + 1] = h
    return path


def integrate(
    field_: VectorField, theta: ParamFunction, x, cfg: IntegrationConfig
) -> np.ndarray:
    """F_theta(x) = H_1 with uniform step 1/cfg.steps."""
    return _march(field_, theta, _check(field_, theta, x), cfg)[-1]


def trajectory(
    field_: VectorField, theta: ParamFunction, x, cfg: IntegrationConfig
) -> np.ndarray:
    """The full path H_0..H_1 on the step grid, shape (steps + 1, d)."""
    return _march(field_, theta, _check(field_, theta, x), cfg)
