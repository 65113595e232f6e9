from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from .errors import InvalidArgumentError

LogFn = Callable[[str], None]

PENALTY_KINDS = ("frob_l2", "max_max", "maxnorm_l2")


def _require(ok: bool, msg: str) -> None:
    if not ok:
        raise InvalidArgumentError(msg)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class ParamClassSpec:
    """Constants of the parameter class Theta and of the fixed fields f_i.

    ``sup_f`` is M, the supremum of the ||f_i|| on the input ball.
    """

    m: int
    r_theta: float
    k_theta: float
    k_f: float
    sup_f: float
    r_x: float
    r_y: float
    k_loss: float

    def __post_init__(self) -> None:
        _require(int(self.m) == self.m and self.m >= 1, f"m must be >= 1: {self.m}")
        _require(
            _finite(self.r_theta, self.k_theta, self.k_f, self.sup_f, self.r_x),
            "class constants must be finite",
        )
        _require(_finite(self.r_y, self.k_loss), "class constants must be finite")
        # the output and Lipschitz bounds are derived under K_f >= 1, R_Theta >= 1
        _require(self.r_theta >= 1.0, f"r_theta must be >= 1: {self.r_theta}")
        _require(self.k_f >= 1.0, f"k_f must be >= 1: {self.k_f}")
        _require(self.k_theta >= 0.0, f"k_theta must be >= 0: {self.k_theta}")
        _require(self.sup_f >= 0.0, f"sup_f must be >= 0: {self.sup_f}")
        _require(self.r_x > 0 and self.r_y > 0, "r_x and r_y must be positive")
        _require(self.k_loss > 0, f"k_loss must be positive: {self.k_loss}")


@dataclass(frozen=True)
class NeuralOdeSpec:
    """Time-independent neural ODE class: ||W||_{1,1} <= r_w."""

    d: int
    r_w: float
    k_sigma: float
    sup_f: float
    r_x: float
    r_y: float
    k_loss: float

    def __post_init__(self) -> None:
        _require(int(self.d) == self.d and self.d >= 1, f"d must be >= 1: {self.d}")
        _require(
            _finite(self.r_w, self.k_sigma, self.sup_f, self.r_x, self.r_y),
            "class constants must be finite",
        )
        _require(
            _finite(self.k_loss),
            "class constants must be finite",
        )
        _require(self.r_w > 0 and self.k_sigma > 0, "r_w and k_sigma must be positive")
        _require(self.sup_f >= 0.0, f"sup_f must be >= 0: {self.sup_f}")
        _require(self.r_x > 0 and self.r_y > 0, "r_x and r_y must be positive")
        _require(self.k_loss > 0, f"k_loss must be positive: {self.k_loss}")


@dataclass(frozen=True)
class WeightClassSpec:
    """Residual network class.

    ||W||_{1,1,inf} <= r_w and ||W_{k+1} - W_k||_inf <= k_w / L.
    """

    d: int
    L: int
    r_w: float
    k_w: float
    k_sigma: float
    r_x: float
    r_y: float
    k_loss: float

    def __post_init__(self) -> None:
        _require(int(self.d) == self.d and self.d >= 1, f"d must be >= 1: {self.d}")
        _require(int(self.L) == self.L and self.L >= 1, f"L must be >= 1: {self.L}")
        _require(
            _finite(self.r_w, self.k_w, self.k_sigma, self.r_x, self.r_y, self.k_loss),
            "class constants must be finite",
        )
        _require(self.r_w > 0 and self.k_sigma > 0, "r_w and k_sigma must be positive")
        _require(self.k_w >= 0.0, f"k_w must be >= 0: {self.k_w}")
        _require(self.r_x > 0 and self.r_y > 0, "r_x and r_y must be positive")
        _require(self.k_loss > 0, f"k_loss must be positive: {self.k_loss}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0  # math.inf trains the weight-tied model
    penalty_kind: str = "frob_l2"
    train_projections: bool = True
    seed: int = 0
    checkpoint_dir: Optional[Path] = None

    def __post_init__(self) -> None:
        _require(self.epochs >= 1, f"epochs must be >= 1: {self.epochs}")
        _require(self.batch_size >= 1, f"batch_size must be >= 1: {self.batch_size}")
        _require(self.learning_rate > 0, "learning_rate must be positive")
        _require(
            not math.isnan(self.lam) and self.lam >= 0,
            f"lam must be >= 0: {self.lam}",
        )
        _require(
            self.penalty_kind in PENALTY_KINDS,
            f"unknown penalty kind: {self.penalty_kind!r}",
        )

    @property
    def weight_tied(self) -> bool:
        return math.isinf(self.lam)


@dataclass(frozen=True)
class RunResult:
    success: bool
    message: str
    analysis: Dict[str, Any]
    output: Optional[Path] = None
