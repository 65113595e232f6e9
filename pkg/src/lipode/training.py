from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .datasets import Dataset
from .errors import DivergenceError, InvalidArgumentError
from .resnet import (
    ResNetModel,
    WeightTensor,
    backward,
    forward,
    penalty_gradient,
    save_weights,
    tie_weights,
    tied_tensor,
    weight_lipschitz,
)
from .types import LogFn, TrainConfig

EVAL_CHUNK = 256


class Adam:
    """Bias-corrected Adam over a dict of named arrays."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(
        self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]
    ) -> Dict[str, np.ndarray]:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out: Dict[str, np.ndarray] = {}
        for name, p in params.items():
            g = grads[name]
            m = b1 * self._m.get(name, np.zeros_like(g)) + (1.0 - b1) * g
            v = b2 * self._v.get(name, np.zeros_like(g)) + (1.0 - b2) * g * g
            self._m[name], self._v[name] = m, v
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            out[name] = p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = np.atleast_2d(logits)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = z.shape[0]
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def mean_cross_entropy(model: ResNetModel, data: Dataset) -> float:
    if len(data) == 0:
        raise InvalidArgumentError("mean cross-entropy of an empty dataset")
    total = 0.0
    for start in range(0, len(data), EVAL_CHUNK):
        xb = data.inputs[start : start + EVAL_CHUNK]
        yb = data.labels[start : start + EVAL_CHUNK]
        loss, _ = cross_entropy(forward(model, xb).output, yb)
        total += loss * len(yb)
    return total / len(data)


def generalization_gap(model: ResNetModel, train: Dataset, test: Dataset) -> float:
    """Test minus train mean cross-entropy, without any penalty term."""
    _check_shapes(model, train)
    _check_shapes(model, test)
    return mean_cross_entropy(model, test) - mean_cross_entropy(model, train)


def _check_shapes(model: ResNetModel, data: Dataset) -> None:
    if data.dim != model.p:
        raise InvalidArgumentError(
            f"{data.name} inputs have width {data.dim}, the model expects {model.p}"
        )
    if data.classes > model.q:
        raise InvalidArgumentError(
            f"{data.name} has {data.classes} classes, the model outputs {model.q}"
        )


def loss_and_gradients(
    model: ResNetModel,
    xb: np.ndarray,
    yb: np.ndarray,
    lam: float = 0.0,
    penalty_kind: str = "frob_l2",
) -> Tuple[float, float, Dict[str, np.ndarray]]:
    """Batch cross-entropy, penalty value and the gradients of
    ``cross_entropy + lam * penalty`` w.r.t. core, A and B.

    A weight-tied core carries no penalty and gets a single (d, d) gradient.
    """
    trace = forward(model, xb)
    loss, upstream = cross_entropy(trace.output, yb)
    grads = backward(model, trace, upstream)
    core_grad = grads.core
    pen = 0.0
    if not model.core.weight_tied:
        pen, pen_grad = penalty_gradient(model.core, penalty_kind)
        if lam > 0:
            core_grad = core_grad + lam * pen_grad
    out = {"core": core_grad}
    if grads.input_proj is not None:
        out["input_proj"] = grads.input_proj
    if grads.output_proj is not None:
        out["output_proj"] = grads.output_proj
    return loss, pen, out


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    test_loss: float
    gap: float
    weight_lipschitz: float
    penalty: float
    wall_time: float


RECORD_FIELDS = [f.name for f in fields(EpochMetrics)]


@dataclass
class RunRecord:
    config: TrainConfig
    epochs: List[EpochMetrics] = field(default_factory=list)

    @property
    def final(self) -> EpochMetrics:
        return self.epochs[-1]

    @property
    def initial(self) -> EpochMetrics:
        return self.epochs[0]

    def rows(self) -> List[Dict[str, float]]:
        return [asdict(m) for m in self.epochs]


def _params(model: ResNetModel, train_projections: bool) -> Dict[str, np.ndarray]:
    core = model.core
    params = {"core": np.array(core.shared if core.weight_tied else core.layers)}
    if train_projections:
        if model.input_proj is not None:
            params["input_proj"] = np.array(model.input_proj)
        if model.output_proj is not None:
            params["output_proj"] = np.array(model.output_proj)
    return params


def _assemble(template: ResNetModel, params: Dict[str, np.ndarray]) -> ResNetModel:
    if template.core.weight_tied:
        core = tied_tensor(params["core"], template.L)
    else:
        core = WeightTensor(params["core"])
    return replace(
        template,
        core=core,
        input_proj=params.get("input_proj", template.input_proj),
        output_proj=params.get("output_proj", template.output_proj),
    )


def _measure(
    model: ResNetModel,
    data: Dataset,
    test: Optional[Dataset],
    cfg: TrainConfig,
    epoch: int,
    started: float,
) -> EpochMetrics:
    train_loss = mean_cross_entropy(model, data)
    test_loss = mean_cross_entropy(model, test) if test is not None else math.nan
    pen = 0.0
    if not model.core.weight_tied:
        pen = penalty_gradient(model.core, cfg.penalty_kind)[0]
    return EpochMetrics(
        epoch=epoch,
        train_loss=train_loss,
        test_loss=test_loss,
        gap=test_loss - train_loss,
        weight_lipschitz=weight_lipschitz(model.core),
        penalty=pen,
        wall_time=time.perf_counter() - started,
    )


def train(
    model: ResNetModel,
    data: Dataset,
    cfg: TrainConfig,
    test: Optional[Dataset] = None,
    log: Optional[LogFn] = None,
) -> Tuple[ResNetModel, RunRecord]:
    """Minimize mean cross-entropy + lam * penalty with Adam.

    ``cfg.lam = inf`` trains the weight-tied model (one shared matrix) with no
    penalty term. Epoch 0 in the record is the model before training. The
    shuffle order comes from its own generator seeded by ``cfg.seed``.
    """
    log = log or (lambda _m: None)
    _check_shapes(model, data)
    if test is not None:
        _check_shapes(model, test)

    if cfg.weight_tied and not model.core.weight_tied:
        model = replace(model, core=tie_weights(model.core))
    model = replace(model, train_projections=cfg.train_projections)
    lam = 0.0 if cfg.weight_tied else cfg.lam

    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5EED])
    params = _params(model, cfg.train_projections)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir is not None else None

    started = time.perf_counter()
    record = RunRecord(cfg)
    record.epochs.append(_measure(model, data, test, cfg, 0, started))
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, _pen, grads = loss_and_gradients(
                    model, data.inputs[idx], data.labels[idx], lam, cfg.penalty_kind
                )
            except DivergenceError as e:
                raise DivergenceError(
                    f"epoch {epoch}, batch {batch}: {e}",
                    step=e.step,
                    epoch=epoch,
                    batch=batch,
                ) from e
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {batch}",
                    epoch=epoch,
                    batch=batch,
                )
            params = opt.step(params, {k: grads[k] for k in params})
            model = _assemble(model, params)

        metrics = _measure(model, data, test, cfg, epoch, started)
        record.epochs.append(metrics)
        log(
            f"epoch {epoch}/{cfg.epochs}: train {metrics.train_loss:.4f} "
            f"test {metrics.test_loss:.4f} gap {metrics.gap:+.4f} "
            f"lip {metrics.weight_lipschitz:.3e}"
        )
        if ckpt_dir is not None:
            save_weights(model.core, ckpt_dir / f"epoch_{epoch:03d}.odrn")
    return model, record
