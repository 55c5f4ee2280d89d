"""Stage-wise incremental learning: expansion, masking, and the combined loss.

A learning stage adds a block of classes. With channel separation on, the
embedding gains fresh rows (channels) reserved for the new stage and the
fingerprint matrix grows block-diagonally, so fingerprints of different
stages have disjoint supports and stay exactly orthogonal forever. Gradient
masks freeze everything that belongs to earlier stages plus the structural
zero blocks.

Training minimizes cross-entropy plus two optional drift penalties: a
response-distillation term against the previous-stage model's outputs on
current data, and a quadratic penalty on previously important parameters
weighted by their Fisher information.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine as en
from .conflict import degree_of_conflict
from .engine import Tensor
from .model import Classifier, classify
from .optim import MaskedSgd, SgdConfig


@dataclass(frozen=True)
class StageSpan:
    """Which fingerprint rows and embedding channels one stage owns."""

    stage: int
    classes: tuple[int, int]   # [start, stop) row range in the fingerprint matrix
    channels: tuple[int, int]  # [start, stop) row range in the embedding layer

    def to_json(self) -> dict:
        return {"stage": self.stage, "classes": list(self.classes),
                "channels": list(self.channels)}

    @classmethod
    def from_json(cls, d: dict) -> "StageSpan":
        return cls(d["stage"], tuple(d["classes"]), tuple(d["channels"]))


@dataclass
class StageContext:
    """Everything stage k needs from stage k-1."""

    stage: int
    masks: dict[str, np.ndarray]
    channel_map: list[StageSpan]
    theta_prev: dict[str, np.ndarray] | None = None
    fisher: dict[str, np.ndarray] | None = None


@dataclass(frozen=True)
class LossWeights:
    """Optional scaling of the three loss terms; defaults keep the plain sum."""

    ce: float = 1.0
    kd: float = 1.0
    ewc: float = 1.0


@dataclass
class StageData:
    """Samples of one stage's classes, train and validation."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    classes: tuple[int, int]


@dataclass
class EpochLog:
    epoch: int
    loss: float
    loss_ce: float
    loss_kd: float
    loss_ewc: float
    doc: float
    accuracy: dict[str, float] = field(default_factory=dict)


def initial_context(model: Classifier) -> StageContext:
    """Stage-0 context: everything trainable, one span owning all rows."""
    masks = {name: np.ones_like(p.data) for name, p in model.named_params().items()}
    span = StageSpan(0, (0, model.n_classes), (0, model.embed_dim))
    return StageContext(stage=0, masks=masks, channel_map=[span])


# ---------------------------------------------------------------------------
# expansion


def expand_embedding(weight: np.ndarray, bias: np.ndarray, new_rows: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Append freshly initialized rows below the existing embedding weights."""
    if new_rows < 1:
        raise ValueError(f"new_rows must be >= 1, got {new_rows}")
    in_dim = weight.shape[1]
    fresh = rng.normal(0.0, np.sqrt(2.0 / in_dim), (new_rows, in_dim))
    return np.vstack([weight, fresh]), np.concatenate([bias, np.zeros(new_rows)])


def expand_similarity(fingerprints: np.ndarray, new_classes: int, new_channels: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Block-diagonal growth: old block kept, cross blocks exactly zero."""
    if new_classes < 1:
        raise ValueError(f"new_classes must be >= 1, got {new_classes}")
    if new_channels < 1:
        raise ValueError(f"new_channels must be >= 1, got {new_channels}")
    old_c, old_n = fingerprints.shape
    out = np.zeros((old_c + new_classes, old_n + new_channels))
    out[:old_c, :old_n] = fingerprints
    out[old_c:, old_n:] = rng.normal(0.0, 1.0 / np.sqrt(new_channels),
                                     (new_classes, new_channels))
    return out


def init_new_fingerprints(class_features: list[np.ndarray],
                          rng: np.random.Generator,
                          degenerate_norm: float = 1e-7) -> np.ndarray:
    """One row per new class: the mean of its embedded feature vectors.

    Each entry of `class_features` is a (channels, n_vectors) matrix. A mean
    whose norm is below `degenerate_norm` carries no usable direction and is
    replaced by a small random vector.
    """
    rows = []
    for i, feats in enumerate(class_features):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise ValueError(f"class {i}: need at least one feature vector")
        mean = feats.mean(axis=1)
        if np.linalg.norm(mean) < degenerate_norm:
            mean = 0.01 * rng.standard_normal(feats.shape[0])
        rows.append(mean)
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# masks


def masks_for_stage(model: Classifier, channel_map: list[StageSpan], stage: int,
                    channel_separation: bool, lock_old_fingerprints: bool) -> dict[str, np.ndarray]:
    """Per-parameter {0,1} masks for an incremental stage (stage >= 1).

    Frozen always: the feature extractor and the structural zero blocks of
    the fingerprint matrix. Earlier stages' embedding channels and (when
    locked) their fingerprint rows are frozen too.
    """
    if stage < 1:
        raise ValueError("masks_for_stage is for incremental stages; use initial_context")
    masks = {name: np.zeros_like(p.data) for name, p in model.named_params().items()}
    head_key = "head.fp" if model.head.kind == "zerobias" else "head.w"
    current = channel_map[stage]
    if channel_separation:
        c0, c1 = current.channels
        masks["embed.w"][c0:c1, :] = 1.0
        masks["embed.b"][c0:c1] = 1.0
        for span in channel_map:
            if span.stage == stage or not lock_old_fingerprints:
                masks[head_key][span.classes[0]:span.classes[1],
                                span.channels[0]:span.channels[1]] = 1.0
    else:
        if lock_old_fingerprints:
            masks[head_key][current.classes[0]:current.classes[1], :] = 1.0
        else:
            masks[head_key][:current.classes[1], :] = 1.0
    return masks


# ---------------------------------------------------------------------------
# loss terms


def kd_loss(responses_prev: np.ndarray, responses_cur: Tensor,
            weight: float = 1.0) -> Tensor:
    """Batch-mean squared drift of old-class responses against the old model."""
    prev = np.asarray(responses_prev, dtype=np.float64)
    old_c, q = prev.shape
    if responses_cur.ndim != 2 or responses_cur.shape[1] != q \
            or responses_cur.shape[0] < old_c:
        raise en.ShapeError(
            f"kd_loss: current responses {responses_cur.shape} do not cover "
            f"previous {prev.shape}")
    cur_old = responses_cur if responses_cur.shape[0] == old_c \
        else en.take_rows(responses_cur, 0, old_c)
    loss = en.scale(en.sum_sq(en.sub(cur_old, en.constant(prev))), 1.0 / q)
    return loss if weight == 1.0 else en.scale(loss, weight)


def ewc_loss(params: dict[str, Tensor], theta_prev: dict[str, np.ndarray],
             fisher: dict[str, np.ndarray], masks: dict[str, np.ndarray] | None = None,
             weight: float = 1.0) -> Tensor:
    """Half the Fisher-weighted squared parameter displacement.

    Entirely frozen parameters are skipped: they cannot move, so their
    penalty is identically zero. Parameters that grew rows since the
    snapshot are penalized on the overlapping leading rows only (new rows
    have no previous value or Fisher weight).
    """
    for name, f in fisher.items():
        if np.any(f < 0):
            raise ValueError(f"ewc_loss: negative Fisher entry in {name!r}")
    total: Tensor | None = None
    for name, p in params.items():
        if name not in fisher or name not in theta_prev:
            continue
        if masks is not None and name in masks and not masks[name].any():
            continue
        prev, f = theta_prev[name], fisher[name]
        if p.shape == prev.shape:
            term = en.weighted_sum_sq(en.sub(p, en.constant(prev)), f)
        elif p.ndim == 2 and prev.ndim == 2 and p.shape[0] >= prev.shape[0] \
                and p.shape[1] >= prev.shape[1]:
            # rows and/or channels grew since the snapshot: penalize the
            # overlapping leading block only (new entries have no history)
            term = en.weighted_sum_sq(
                en.sub(en.take_block(p, prev.shape[0], prev.shape[1]), en.constant(prev)), f)
        else:
            continue
        total = term if total is None else en.add(total, term)
    if total is None:
        return en.constant(0.0)
    return en.scale(total, 0.5 * weight)


def estimate_fisher(model: Classifier, x_val: np.ndarray) -> dict[str, np.ndarray]:
    """Squared gradient of log mean softmax output at the predicted class.

    The whole validation set is processed as one batch, so duplicating every
    sample leaves the estimate unchanged.
    """
    if len(x_val) == 0:
        raise ValueError("estimate_fisher: empty validation set")
    probs = classify(model.scores_t(x_val), model.temperature)
    n = probs.shape[1]
    avg = en.matmul(probs, en.constant(np.full((n, 1), 1.0 / n)))
    predicted = int(np.argmax(avg.data))
    picked = en.take_rows(avg, predicted, predicted + 1)
    model.zero_grad()
    picked.backward(seed=1.0 / picked.item())  # d log(p)/dtheta = (1/p) dp/dtheta
    fisher = {}
    for name, p in model.named_params().items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        fisher[name] = g * g
    model.zero_grad()
    return fisher


# ---------------------------------------------------------------------------
# training


def _accuracy(model: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    return 100.0 * float((model.predict(x) == y).mean())


def train_stage(model: Classifier, ctx: StageContext, data: StageData, epochs: int,
                sgd_cfg: SgdConfig, batch_size: int, rng: np.random.Generator,
                kd_on: bool = False, ewc_on: bool = False,
                prev_model: Classifier | None = None,
                weights: LossWeights = LossWeights(),
                eval_sets: dict[str, tuple[np.ndarray, np.ndarray]] | None = None) -> list[EpochLog]:
    """Run one stage of masked training; only unmasked parameters change.

    Returns one log entry per epoch with the loss decomposition, the live
    degree of conflict of the fingerprint matrix, and accuracies on the
    provided evaluation sets. With epochs == 0 the model is untouched.
    """
    if len(data.y_train) == 0:
        raise ValueError("train_stage: empty stage data")
    lo, hi = data.classes
    if data.y_train.min() < lo or data.y_train.max() >= hi:
        raise ValueError(f"train_stage: labels outside declared stage classes [{lo}, {hi})")
    if kd_on and prev_model is None:
        raise ValueError("train_stage: kd_on requires the previous-stage model")
    if ewc_on and (ctx.fisher is None or ctx.theta_prev is None):
        raise ValueError("train_stage: ewc_on requires a Fisher matrix and snapshot")

    params = model.named_params()
    opt = MaskedSgd(params, ctx.masks, sgd_cfg)
    logs: list[EpochLog] = []
    n = len(data.y_train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            scores = model.scores_t(xb)
            ce = en.cross_entropy(classify(scores, model.temperature), yb)
            if weights.ce != 1.0:
                ce = en.scale(ce, weights.ce)
            total = ce
            kd_val = 0.0
            if kd_on:
                kd = kd_loss(prev_model.scores(xb), scores, weights.kd)
                total = en.add(total, kd)
                kd_val = kd.item()
            ewc_val = 0.0
            if ewc_on:
                ewc = ewc_loss(params, ctx.theta_prev, ctx.fisher, ctx.masks, weights.ewc)
                if ewc.requires_grad:
                    total = en.add(total, ewc)
                ewc_val = ewc.item()
            model.zero_grad()
            total.backward()
            opt.step()
            sums += (total.item(), ce.item(), kd_val, ewc_val)
            batches += 1
        means = sums / batches
        accuracy = {name: _accuracy(model, x, y)
                    for name, (x, y) in (eval_sets or {}).items() if len(y)}
        logs.append(EpochLog(epoch, means[0], means[1], means[2], means[3],
                             degree_of_conflict(model.head.fingerprint_matrix()),
                             accuracy))
    return logs


def stage_snapshot(model: Classifier, x_val: np.ndarray) -> tuple[dict, dict]:
    """Parameter snapshot plus Fisher estimate, the inputs to the next stage."""
    return model.snapshot(), estimate_fisher(model, x_val)


def advance_context(ctx: StageContext, theta: dict, fisher: dict) -> StageContext:
    return replace(ctx, theta_prev=theta, fisher=fisher)
