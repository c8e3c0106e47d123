"""Loss, AdamW, metrics, and the mini-batch training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ansatz import AnsatzConfig
from .model import BiqcConfig, biqc_backward, biqc_forward, check_params

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
MONITORS = ("train", "val")

# rng stream tags so shuffling, training noise and evaluation noise never collide
_SHUFFLE, _TRAIN_NOISE, _EVAL_NOISE = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    max_epochs: int = 10000
    patience: int = 50
    min_delta: float = 1e-6
    batch_size: int = 16
    seed: int = 0
    noise_level: float = 0.0
    train_with_noise: bool = False
    ablation: frozenset = frozenset()
    monitor: str = "train"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError(f"need learning_rate > 0 and weight_decay >= 0: {self}")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ValueError(f"need max_epochs >= 1, batch_size >= 1, patience >= 0: {self}")
        if self.noise_level < 0 or self.min_delta < 0:
            raise ValueError(f"noise_level and min_delta must be >= 0: {self}")
        if self.monitor not in MONITORS:
            raise ValueError(f"monitor must be one of {MONITORS}, got {self.monitor!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError(f"invalid AdamW moments: {self}")


@dataclass
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def bce_loss(p, y) -> np.ndarray | float:
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    out = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def bce_grad(p, y) -> np.ndarray | float:
    """dL/dp = (p - y) / (p (1 - p)) at the clamped probability."""
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    out = (p - y) / (p * (1 - p))
    return float(out) if out.ndim == 0 else out


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    bad = (y != 0) & (y != 1)
    if np.any(bad):
        raise ValueError(f"labels must be 0 or 1, got {y[bad].flat[0]!r}")
    return y


def adamw_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptState, cfg: TrainConfig
) -> tuple[dict[str, np.ndarray], OptState]:
    """One AdamW update with decoupled weight decay; returns new dicts."""
    if set(params) != set(grads):
        raise ValueError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient {k!r} has shape {g.shape}, parameter has {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {k!r} at step {state.step + 1}")
    t = state.step + 1
    c1, c2 = 1 - cfg.beta1**t, 1 - cfg.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        m = cfg.beta1 * state.m[k] + (1 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1 - cfg.beta2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_p[k] = theta - cfg.learning_rate * step - cfg.learning_rate * cfg.weight_decay * theta
        new_m[k], new_v[k] = m, v
    return new_p, OptState(new_m, new_v, t)


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counting 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _check_labels(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores for {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc is undefined unless both classes are present")
    # midranks handle ties exactly
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    _, first, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    mid = first + (counts + 1) / 2.0
    ranks[order] = np.repeat(mid, counts)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probs, labels) -> float:
    labels = _check_labels(labels)
    return float(np.mean((np.asarray(probs) >= 0.5) == (labels == 1)))


def nyquist_coefficient(features) -> float:
    """DFT coefficient at normalized frequency 1.0: mean of (-1)^j f_j."""
    f = np.asarray(features, dtype=np.float64).reshape(-1)
    if f.size < 2:
        raise ValueError(f"need at least 2 features, got {f.size}")
    signs = np.where(np.arange(f.size) % 2 == 0, 1.0, -1.0)
    return float(signs @ f / f.size)


@dataclass
class EvalReport:
    accuracy: float
    auc: float  # nan when only one class is present
    probs: np.ndarray
    loss: float
    features: np.ndarray | None = None  # fused pre-head vectors

    def summary(self) -> str:
        return f"loss={self.loss:.6f} accuracy={self.accuracy:.4f} auc={self.auc:.4f} n={self.probs.size}"


def _sample_rngs(config: BiqcConfig, seed: int, tag: int, epoch: int, indices) -> list | None:
    if config.ansatz.noise_level == 0:
        return None
    return [np.random.default_rng([seed, tag, epoch, int(i)]) for i in indices]


def evaluate(
    config: BiqcConfig,
    params: dict[str, np.ndarray],
    images,
    labels,
    seed: int = 0,
    batch_size: int = 64,
    keep_features: bool = False,
) -> EvalReport:
    """Forward-only metrics. Noise draws depend on (seed, sample index) only."""
    images = np.asarray(images, dtype=np.float64)
    labels = _check_labels(labels).reshape(-1)
    if images.shape[0] != labels.size or labels.size == 0:
        raise ValueError(f"{images.shape[0]} images for {labels.size} labels")
    probs, feats = [], []
    for start in range(0, labels.size, batch_size):
        idx = np.arange(start, min(start + batch_size, labels.size))
        trace = biqc_forward(config, params, images[idx], rngs=_sample_rngs(config, seed, _EVAL_NOISE, 0, idx))
        probs.append(trace.prob)
        if keep_features:
            feats.append(trace.fused)
    p = np.concatenate(probs)
    try:
        score = auc(p, labels)
    except ValueError:
        score = float("nan")
    return EvalReport(
        accuracy(p, labels),
        score,
        p,
        float(np.mean(bce_loss(p, labels))),
        np.concatenate(feats) if keep_features else None,
    )


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    test_auc: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    config: BiqcConfig
    log: list[EpochMetrics] = field(default_factory=list)
    best_loss: float = float("inf")
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.log)


def resolve_model_config(model: BiqcConfig, cfg: TrainConfig) -> BiqcConfig:
    """Fold the train-level ablation set and noise level into the model config."""
    ansatz = replace(model.ansatz, noise_level=cfg.noise_level) if cfg.noise_level else model.ansatz
    return replace(model, ablation=model.ablation | cfg.ablation, ansatz=ansatz)


def train_loop(
    model: BiqcConfig,
    params: dict[str, np.ndarray],
    train_images,
    train_labels,
    test_images,
    test_labels,
    cfg: TrainConfig,
    callback=None,
) -> TrainResult:
    """Mini-batch AdamW on mean BCE with loss-plateau early stopping.

    The epoch loss is the sample-weighted mean of the batch losses seen
    during the epoch, and train accuracy comes from the same probabilities.
    With ``monitor="val"`` the test-split loss drives early stopping.
    Gradient steps run noiseless unless ``train_with_noise``; evaluation
    always uses the configured noise level.
    ``patience = 0`` stops after the first epoch.
    """
    config = resolve_model_config(model, cfg)
    check_params(config, params)
    x_tr = np.asarray(train_images, dtype=np.float64)
    y_tr = _check_labels(train_labels).reshape(-1)
    x_te = np.asarray(test_images, dtype=np.float64)
    y_te = _check_labels(test_labels).reshape(-1)
    for name, x, y in (("train", x_tr, y_tr), ("test", x_te, y_te)):
        if y.size == 0:
            raise ValueError(f"{name} split is empty")
        if x.shape != (y.size, config.image_h, config.image_w):
            raise ValueError(
                f"{name} images have shape {x.shape}; model expects ({y.size}, {config.image_h}, {config.image_w})"
            )

    step_config = config
    if not cfg.train_with_noise:
        step_config = replace(config, ansatz=replace(config.ansatz, noise_level=0.0))
    params = {k: v.copy() for k, v in params.items()}
    state = OptState.zeros_like(params)
    result = TrainResult(params, config)
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, _SHUFFLE, epoch]).permutation(y_tr.size)
        loss_sum, correct = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rngs = _sample_rngs(step_config, cfg.seed, _TRAIN_NOISE, epoch, idx)
            trace = biqc_forward(step_config, params, x_tr[idx], rngs=rngs, grad=True)
            losses = bce_loss(trace.prob, y_tr[idx])
            loss_sum += float(np.sum(losses))
            correct += int(np.sum((trace.prob >= 0.5) == (y_tr[idx] == 1)))
            grads = biqc_backward(step_config, params, trace, y_tr[idx])
            try:
                params, state = adamw_step(params, grads, state, cfg)
            except FloatingPointError as err:
                raise FloatingPointError(f"epoch {epoch} aborted: {err}") from None
        train_loss = loss_sum / y_tr.size
        report = evaluate(config, params, x_te, y_te, seed=cfg.seed, batch_size=max(cfg.batch_size, 64))
        row = EpochMetrics(epoch, train_loss, correct / y_tr.size, report.accuracy, report.auc)
        result.log.append(row)
        log.info("epoch %d loss %.6f train_acc %.4f test_acc %.4f test_auc %.4f", *vars(row).values())
        if callback is not None:
            callback(row)

        monitored = train_loss if cfg.monitor == "train" else report.loss
        if monitored < result.best_loss - cfg.min_delta:
            result.best_loss, wait = monitored, 0
        else:
            wait += 1
        if wait >= cfg.patience:
            result.stopped_early = epoch < cfg.max_epochs
            break
    result.params = params
    return result


def write_metrics_csv(path, rows: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc", "test_acc", "test_auc"])
        for r in rows:
            writer.writerow([r.epoch, repr(r.loss), repr(r.train_acc), repr(r.test_acc), repr(r.test_auc)])


def write_spectrum_csv(path, labels, features: np.ndarray) -> list[float]:
    coeffs = [nyquist_coefficient(f) for f in features]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label", "coefficient"])
        for i, (y, c) in enumerate(zip(labels, coeffs)):
            writer.writerow([i, int(y), repr(c)])
    return coeffs


def write_features_csv(path, labels, features: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label"] + [f"f{j}" for j in range(features.shape[1])])
        for i, (y, f) in enumerate(zip(labels, features)):
            writer.writerow([i, int(y)] + [repr(float(v)) for v in f])


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(Path(path), newline="") as fh:
        return [
            EpochMetrics(int(r["epoch"]), float(r["loss"]), float(r["train_acc"]), float(r["test_acc"]), float(r["test_auc"]))
            for r in csv.DictReader(fh)
        ]


def config_to_dict(model: BiqcConfig, cfg: TrainConfig) -> dict[str, object]:
    """Flat model.* / train.* mapping with JSON-friendly values."""
    out: dict[str, object] = {}
    for f in fields(model):
        value = getattr(model, f.name)
        if f.name == "ansatz":
            for g in fields(value):
                out[f"model.ansatz.{g.name}"] = getattr(value, g.name)
        else:
            out[f"model.{f.name}"] = sorted(value) if isinstance(value, frozenset) else value
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        out[f"train.{f.name}"] = sorted(value) if isinstance(value, frozenset) else value
    return out


def config_from_dict(flat: dict[str, object]) -> tuple[BiqcConfig, TrainConfig]:
    ansatz = {k.split(".", 2)[2]: v for k, v in flat.items() if k.startswith("model.ansatz.")}
    model = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("model.") and not k.startswith("model.ansatz.")}
    train = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("train.")}
    model["ansatz"] = AnsatzConfig(**ansatz)
    return BiqcConfig(**model), TrainConfig(**train)
