"""Dense matrix kernels, the matrix norms used by the bounds, activations and
the Gaussian-process path sampler behind smooth-in-depth initialization.

Everything is float64. Matrices are plain 2-D ``numpy`` arrays validated by
:func:`as_matrix`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, InvalidArgumentError, NumericalFailureError

logger = logging.getLogger(__name__)

MAX_JITTER = 1e-4


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return a


def norm_11(m) -> float:
    """Sum of the absolute values of the entries."""
    return float(np.abs(as_matrix(m)).sum())


def norm_max(m) -> float:
    """Element-wise maximum norm."""
    return float(np.abs(as_matrix(m)).max())


def norm_21(m) -> float:
    """l1-norm of the l2-norms of the columns."""
    return float(np.sqrt((as_matrix(m) ** 2).sum(axis=0)).sum())


def spectral_norm(
    m,
    tol: float = 1e-9,
    max_iters: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest singular value by power iteration on m^T m.

    Starts from the first canonical basis vector; if an iterate lands in the
    null space the start is re-drawn from ``rng``. Iterates never overestimate
    the true value.
    """
    a = as_matrix(m)
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    n = gram.shape[0]
    v = np.zeros(n)
    v[0] = 1.0
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = gram @ v
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            rng = rng if rng is not None else np.random.default_rng(0)
            logger.debug("power iteration hit the null space at step %d", it)
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v_next = w / w_norm
        lam_next = float(v_next @ gram @ v_next)
        if abs(lam_next - lam) <= tol * lam_next:
            return math.sqrt(max(lam_next, 0.0))
        v, lam = v_next, lam_next
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations",
        last_iterate=math.sqrt(max(lam, 0.0)),
        iterations=max_iters,
    )


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    lipschitz: float


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _relu_deriv(x: np.ndarray) -> np.ndarray:
    # subgradient at 0 is 0
    return (x > 0.0).astype(np.float64)


def _tanh_deriv(x: np.ndarray) -> np.ndarray:
    return 1.0 - np.tanh(x) ** 2


def _identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _ones(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x, dtype=np.float64)


RELU = Activation("relu", _relu, _relu_deriv, 1.0)
TANH = Activation("tanh", np.tanh, _tanh_deriv, 1.0)
IDENTITY = Activation("identity", _identity, _ones, 1.0)

ACTIVATIONS: Dict[str, Activation] = {a.name: a for a in (RELU, TANH, IDENTITY)}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        known = ", ".join(sorted(ACTIVATIONS))
        raise InvalidArgumentError(
            f"unknown activation {name!r} (known: {known})"
        ) from None


@dataclass(frozen=True)
class GpPathSpec:
    """Zero-mean GP with RBF kernel exp(-(s-t)^2 / (2 bandwidth^2)) sampled at
    the knots k/L, k = 1..L."""

    knot_count: int
    bandwidth: float = 0.1
    jitter: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.knot_count < 1:
            raise InvalidArgumentError(f"knot_count must be >= 1: {self.knot_count}")
        if not self.bandwidth > 0:
            raise InvalidArgumentError(f"bandwidth must be positive: {self.bandwidth}")
        if not self.jitter > 0:
            raise InvalidArgumentError(f"jitter must be positive: {self.jitter}")


def gp_knots(knot_count: int) -> np.ndarray:
    return np.arange(1, knot_count + 1, dtype=np.float64) / knot_count


def rbf_kernel(s: np.ndarray, t: np.ndarray, bandwidth: float) -> np.ndarray:
    diff = np.subtract.outer(np.asarray(s, float), np.asarray(t, float))
    return np.exp(-(diff**2) / (2.0 * bandwidth**2))


def gp_cholesky(spec: GpPathSpec) -> np.ndarray:
    """Lower Cholesky factor of the jittered kernel matrix.

    The jitter is escalated x10 up to MAX_JITTER; beyond that the kernel is
    reported as numerically singular.
    """
    t = gp_knots(spec.knot_count)
    gram = rbf_kernel(t, t, spec.bandwidth)
    eye = np.eye(spec.knot_count)
    jitter = spec.jitter
    while True:
        try:
            return linalg.cholesky(gram + jitter * eye, lower=True)
        except linalg.LinAlgError:
            if jitter * 10.0 > MAX_JITTER * (1.0 + 1e-9):
                raise NumericalFailureError(
                    f"Cholesky failed for L={spec.knot_count}, "
                    f"bandwidth={spec.bandwidth} up to jitter {jitter:g}"
                ) from None
            jitter *= 10.0
            logger.warning("Cholesky failed, retrying with jitter %g", jitter)


def sample_gp_paths(
    spec: GpPathSpec, count: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """``count`` independent GP paths, shape (count, knot_count)."""
    if count < 0:
        raise InvalidArgumentError(f"count must be >= 0: {count}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    factor = gp_cholesky(spec)
    z = rng.standard_normal((spec.knot_count, count))
    return (factor @ z).T


def sample_gp_path(spec: GpPathSpec) -> np.ndarray:
    """One GP path at the knots k/L, deterministic given ``spec.seed``."""
    return sample_gp_paths(spec, 1)[0]
