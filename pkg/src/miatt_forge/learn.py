"""Multi-target training of a per-pixel patch classifier.

The model maps the (2r+1)^2 patch around each pixel through one tanh hidden
layer and a logistic output.  Training minimizes a fact-masked, per-target
normalized binary cross-entropy, weighted by the per-target alpha vector,
with exact analytic gradients and full-batch gradient descent + classical
momentum.  Logical metrics drive checkpoint selection and the stop rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    OBJECT,
    UNKNOWN,
    AssessmentFailedError,
    Instance,
    MiattSet,
    ProbabilityMap,
    ShapeMismatchError,
    assess_miatts,
    derive_ltt,
)
from .laf import (
    ConfusionCounts,
    LafParams,
    MetricSet,
    binarize,
    logical_assessment_metric_build,
    logical_consistency_estimate,
)
from .rng import SplitStream

_TAG_INIT = 0x1417

ALPHA_SUM_TOL = 1e-9
DEFAULT_CLAMP_EPSILON = 1e-7


class EmptyFactsError(ValueError):
    """A target asserts no facts at all, so its loss term is undefined."""


class WeightMismatchError(ValueError):
    """The alpha vector does not match the target count or does not sum to 1."""


class NonFiniteLossError(RuntimeError):
    """Training aborted because the loss became NaN or infinite."""


@dataclass(frozen=True, eq=False)
class Model:
    """One-hidden-layer patch classifier: tanh hidden units, logistic output."""

    patch_radius: int
    hidden_width: int
    weights_in: np.ndarray  # (hidden_width, (2r+1)^2)
    bias_in: np.ndarray  # (hidden_width,)
    weights_out: np.ndarray  # (hidden_width,)
    bias_out: float

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be non-negative")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")
        k = (2 * self.patch_radius + 1) ** 2
        w_in = np.asarray(self.weights_in, dtype=np.float64)
        b_in = np.asarray(self.bias_in, dtype=np.float64)
        w_out = np.asarray(self.weights_out, dtype=np.float64)
        if w_in.shape != (self.hidden_width, k):
            raise ValueError(f"weights_in must have shape ({self.hidden_width}, {k})")
        if b_in.shape != (self.hidden_width,):
            raise ValueError(f"bias_in must have shape ({self.hidden_width},)")
        if w_out.shape != (self.hidden_width,):
            raise ValueError(f"weights_out must have shape ({self.hidden_width},)")
        for arr in (w_in, b_in, w_out):
            if not np.isfinite(arr).all():
                raise ValueError("model parameters must be finite")
        if not math.isfinite(self.bias_out):
            raise ValueError("bias_out must be finite")
        for name, arr in (("weights_in", w_in), ("bias_in", b_in), ("weights_out", w_out)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "bias_out", float(self.bias_out))

    @property
    def patch_size(self) -> int:
        return (2 * self.patch_radius + 1) ** 2

    def __eq__(self, other) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.patch_radius == other.patch_radius
            and self.hidden_width == other.hidden_width
            and bool((self.weights_in == other.weights_in).all())
            and bool((self.bias_in == other.bias_in).all())
            and bool((self.weights_out == other.weights_out).all())
            and self.bias_out == other.bias_out
        )


@dataclass(frozen=True)
class Gradients:
    """Parameter-shaped gradient of the surrogate loss."""

    weights_in: np.ndarray
    bias_in: np.ndarray
    weights_out: np.ndarray
    bias_out: float


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the multi-target optimization loop.

    ``alpha`` is the per-target weight vector; None means uniform 1/N per
    MIATT set.  Stop thresholds are strict: LIoU must exceed
    ``stop_liou_min`` and LErrors must stay below ``stop_lerrors_max``.
    """

    alpha: Optional[tuple[float, ...]] = None
    learning_rate: float = 0.1
    momentum: float = 0.9
    max_epochs: int = 2000
    eval_every: int = 10
    stop_liou_min: float = 0.999
    stop_lerrors_max: int = 100
    prob_clamp_epsilon: float = DEFAULT_CLAMP_EPSILON
    patch_radius: int = 3
    hidden_width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.alpha is not None:
            alpha = tuple(float(a) for a in self.alpha)
            if any(a <= 0 for a in alpha):
                raise ValueError("every alpha must be positive")
            if abs(sum(alpha) - 1.0) > ALPHA_SUM_TOL:
                raise ValueError("alpha must sum to 1")
            object.__setattr__(self, "alpha", alpha)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ValueError("max_epochs and eval_every must be positive")
        if not (0.0 < self.prob_clamp_epsilon < 0.5):
            raise ValueError("prob_clamp_epsilon must lie in (0, 0.5)")
        if self.patch_radius < 0 or self.hidden_width < 1:
            raise ValueError("invalid model size")


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    loss: float
    counts: ConfusionCounts
    metrics: MetricSet
    instance_counts: tuple[ConfusionCounts, ...] = ()


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[TrainRecord, ...]
    selected_epoch: Optional[int]

    def record_at(self, epoch: int) -> TrainRecord:
        for r in self.records:
            if r.epoch == epoch:
                return r
        raise KeyError(f"no history record at epoch {epoch}")


def init_model(patch_radius: int, hidden_width: int, seed: int) -> Model:
    """Seeded init: every tensor uniform in +-1/sqrt(fan_in) of its layer."""
    stream = SplitStream(seed).child(_TAG_INIT)
    k = (2 * patch_radius + 1) ** 2
    bound_in = 1.0 / math.sqrt(k)
    bound_out = 1.0 / math.sqrt(hidden_width)
    w_in = (stream.uniforms(hidden_width * k) * 2.0 - 1.0).reshape(hidden_width, k) * bound_in
    b_in = (stream.uniforms(hidden_width) * 2.0 - 1.0) * bound_in
    w_out = (stream.uniforms(hidden_width) * 2.0 - 1.0) * bound_out
    b_out = float((stream.uniforms(1)[0] * 2.0 - 1.0) * bound_out)
    return Model(patch_radius, hidden_width, w_in, b_in, w_out, b_out)


def _patch_matrix(instance: Instance, radius: int) -> np.ndarray:
    """(pixels, patch_size) matrix of replicate-padded patches, row-major."""
    padded = np.pad(instance.pixels, radius, mode="edge")
    side = 2 * radius + 1
    windows = sliding_window_view(padded, (side, side))
    return windows.reshape(instance.height * instance.width, side * side)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_parts(model: Model, patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden activations (pixels, hidden) and output probabilities (pixels,)."""
    hidden = np.tanh(patches @ model.weights_in.T + model.bias_in)
    probs = _sigmoid(hidden @ model.weights_out + model.bias_out)
    return hidden, probs


def forward(model: Model, d: Instance) -> ProbabilityMap:
    """Per-pixel object probability for an instance."""
    _, probs = _forward_parts(model, _patch_matrix(d, model.patch_radius))
    return ProbabilityMap(probs.reshape(d.height, d.width))


def _fact_weights_and_labels(
    m: MiattSet, alpha: Sequence[float], n_pixels: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel loss weight sum_i alpha_i/|SF(t_i)| and the asserted label.

    Requires a passing set, so all targets asserting a pixel agree on its
    label and the last writer below is as good as any.
    """
    if len(alpha) != len(m.targets):
        raise WeightMismatchError(
            f"alpha has {len(alpha)} entries for {len(m.targets)} targets"
        )
    if abs(sum(alpha) - 1.0) > ALPHA_SUM_TOL:
        raise WeightMismatchError(f"alpha sums to {sum(alpha)!r}, expected 1")
    if any(a <= 0 for a in alpha):
        raise WeightMismatchError("every alpha must be positive")

    weights = np.zeros(n_pixels)
    labels = np.zeros(n_pixels)
    for a, t in zip(alpha, m.targets):
        flat = t.flat()
        determined = flat != int(UNKNOWN)
        n_facts = int(determined.sum())
        if n_facts == 0:
            raise EmptyFactsError("a target with zero facts has no loss term")
        weights[determined] += a / n_facts
        labels[determined] = (flat[determined] == int(OBJECT)).astype(np.float64)
    return weights, labels


def _loss_grad_core(
    model: Model,
    patches: np.ndarray,
    weights: np.ndarray,
    labels: np.ndarray,
    clamp: float,
) -> tuple[float, Gradients, np.ndarray]:
    hidden, probs = _forward_parts(model, patches)
    clamped = np.clip(probs, clamp, 1.0 - clamp)
    bce = -(labels * np.log(clamped) + (1.0 - labels) * np.log(1.0 - clamped))
    loss = float(np.dot(weights, bce))

    # d loss / d logit is w*(p - y) where the clamp is inactive, else 0
    inside = (probs > clamp) & (probs < 1.0 - clamp)
    g_logit = weights * (probs - labels) * inside

    grad_b_out = float(g_logit.sum())
    grad_w_out = hidden.T @ g_logit
    g_hidden = np.outer(g_logit, model.weights_out) * (1.0 - hidden**2)
    grad_b_in = g_hidden.sum(axis=0)
    grad_w_in = g_hidden.T @ patches
    return loss, Gradients(grad_w_in, grad_b_in, grad_w_out, grad_b_out), probs


def surrogate_loss_and_grad(
    model: Model,
    d: Instance,
    m: MiattSet,
    alpha: Sequence[float],
    clamp_epsilon: float = DEFAULT_CLAMP_EPSILON,
) -> tuple[float, Gradients]:
    """Fact-masked BCE surrogate and its exact analytic gradient.

    loss = sum_i alpha_i * mean over t_i's facts of BCE(clamped prob, label).
    The targets must be mutually consistent (the loss needs one label per
    asserted pixel); count and partiality gating happens in train_uttl.
    """
    report = assess_miatts(m)
    if not report.consistent:
        raise AssessmentFailedError(report)
    if (d.height, d.width) != m.targets[0].cells.shape:
        raise ShapeMismatchError(
            f"instance {d.width}x{d.height} vs targets "
            f"{m.targets[0].width}x{m.targets[0].height}"
        )
    weights, labels = _fact_weights_and_labels(m, alpha, d.height * d.width)
    patches = _patch_matrix(d, model.patch_radius)
    loss, grad, _ = _loss_grad_core(model, patches, weights, labels, clamp_epsilon)
    return loss, grad


def check_stop(ms: MetricSet, cfg: TrainConfig) -> bool:
    """True iff LIoU is defined and strictly above the bound while LErrors is
    strictly below its cap; an undefined LIoU never satisfies the rule."""
    return (
        ms.liou is not None
        and ms.liou > cfg.stop_liou_min
        and ms.lerrors < cfg.stop_lerrors_max
    )


def _resolve_alphas(
    dataset: Sequence[tuple[Instance, MiattSet]], cfg: TrainConfig
) -> list[tuple[float, ...]]:
    alphas = []
    for _, m in dataset:
        n = len(m.targets)
        if cfg.alpha is None:
            alphas.append(tuple(1.0 / n for _ in range(n)))
        else:
            if len(cfg.alpha) != n:
                raise WeightMismatchError(
                    f"alpha has {len(cfg.alpha)} entries but a set has {n} targets"
                )
            alphas.append(cfg.alpha)
    return alphas


def train_uttl(
    dataset: Sequence[tuple[Instance, MiattSet]],
    cfg: TrainConfig,
    laf_params: LafParams = LafParams(),
    on_record: Optional[Callable[[TrainRecord], None]] = None,
) -> tuple[Model, TrainHistory]:
    """Optimize the classifier against the summed per-instance surrogate loss.

    Every ``eval_every`` epochs (and at epoch 1, as the baseline) the current
    parameters are scored with the logical metrics, counts summed across
    instances before metric building.  Training returns at the first record
    satisfying the stop rule; if the budget runs out it returns the recorded
    epoch with minimal LErrors (ties: higher LIoU, then earlier epoch).
    Fully deterministic for a given (dataset, cfg).
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    for d, m in dataset:
        report = assess_miatts(m)
        if not report.passed:
            raise AssessmentFailedError(report)
        if (d.height, d.width) != m.targets[0].cells.shape:
            raise ShapeMismatchError("instance and target shapes differ")
    alphas = _resolve_alphas(dataset, cfg)
    ltts = [derive_ltt(m) for _, m in dataset]
    prepared = []
    for (d, m), alpha in zip(dataset, alphas):
        weights, labels = _fact_weights_and_labels(m, alpha, d.height * d.width)
        prepared.append((d, _patch_matrix(d, cfg.patch_radius), weights, labels))

    model = init_model(cfg.patch_radius, cfg.hidden_width, cfg.seed)
    params = {
        "weights_in": model.weights_in.copy(),
        "bias_in": model.bias_in.copy(),
        "weights_out": model.weights_out.copy(),
        "bias_out": np.array([model.bias_out]),
    }
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def snapshot() -> Model:
        return Model(
            cfg.patch_radius,
            cfg.hidden_width,
            params["weights_in"],
            params["bias_in"],
            params["weights_out"],
            float(params["bias_out"][0]),
        )

    records: list[TrainRecord] = []
    best: Optional[tuple[tuple, Model, int]] = None  # (rank key, model, epoch)

    for epoch in range(1, cfg.max_epochs + 1):
        current = snapshot()
        total_loss = 0.0
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        probs_per_instance = []
        for d, patches, weights, labels in prepared:
            loss_i, g, probs = _loss_grad_core(
                current, patches, weights, labels, cfg.prob_clamp_epsilon
            )
            total_loss += loss_i
            grads["weights_in"] += g.weights_in
            grads["bias_in"] += g.bias_in
            grads["weights_out"] += g.weights_out
            grads["bias_out"] += g.bias_out
            probs_per_instance.append(probs)
        if not math.isfinite(total_loss):
            raise NonFiniteLossError(f"loss became non-finite at epoch {epoch}")

        if epoch == 1 or epoch % cfg.eval_every == 0:
            per_instance = []
            for (d, _, _, _), probs, ltt in zip(prepared, probs_per_instance, ltts):
                pmap = ProbabilityMap(probs.reshape(d.height, d.width))
                pred = binarize(pmap, laf_params.binarize_threshold)
                per_instance.append(logical_consistency_estimate(pred, ltt, laf_params))
            counts = per_instance[0]
            for c in per_instance[1:]:
                counts = counts + c
            metrics = logical_assessment_metric_build(counts, laf_params)
            record = TrainRecord(epoch, total_loss, counts, metrics, tuple(per_instance))
            records.append(record)
            if on_record is not None:
                on_record(record)
            if check_stop(metrics, cfg):
                return current, TrainHistory(tuple(records), epoch)
            liou_rank = -metrics.liou if metrics.liou is not None else math.inf
            key = (metrics.lerrors, liou_rank, epoch)
            if best is None or key < best[0]:
                best = (key, current, epoch)

        for k in params:
            velocity[k] = cfg.momentum * velocity[k] + grads[k]
            params[k] = params[k] - cfg.learning_rate * velocity[k]

    assert best is not None  # at least epoch 1 was recorded
    return best[1], TrainHistory(tuple(records), best[2])
