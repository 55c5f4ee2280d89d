"""Incremental-learning strategies sharing one training path.

All strategies run the same masked trainer with different switch settings,
which keeps comparisons honest:

  csil      channel separation, distillation and Fisher penalties on; old
            fingerprint rows frozen along with their channels
  finetune  no expansion; extractor, embedding and old fingerprints frozen;
            cross-entropy only on the appended rows
  lwf       no expansion; extractor and embedding frozen; whole fingerprint
            matrix trainable with the distillation penalty
  ewc       like lwf but with the Fisher penalty instead of distillation

Ablation rows toggle individual switches on the csil tag; turning channel
separation off yields full-width insertion with both penalties active.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .continual import (
    EpochLog,
    LossWeights,
    StageContext,
    StageData,
    StageSpan,
    expand_embedding,
    expand_similarity,
    init_new_fingerprints,
    masks_for_stage,
    train_stage,
)
from .model import Classifier, batch_to_input
from .optim import SgdConfig

STRATEGY_TAGS = ("csil", "finetune", "lwf", "ewc")


@dataclass(frozen=True)
class StrategyConfig:
    tag: str
    channel_separation: bool
    kd: bool
    ewc: bool
    lock_old_fingerprints: bool

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise ValueError(f"unknown strategy tag {self.tag!r}")

    @property
    def name(self) -> str:
        if self.tag != "csil":
            return self.tag
        off = [label for label, on in
               (("cs", self.channel_separation), ("ewc", self.ewc), ("kd", self.kd)) if not on]
        return "csil" if not off else "csil_no_" + "_".join(off)


_RECIPES = {
    "csil": StrategyConfig("csil", channel_separation=True, kd=True, ewc=True,
                           lock_old_fingerprints=True),
    "finetune": StrategyConfig("finetune", channel_separation=False, kd=False, ewc=False,
                               lock_old_fingerprints=True),
    "lwf": StrategyConfig("lwf", channel_separation=False, kd=True, ewc=False,
                          lock_old_fingerprints=False),
    "ewc": StrategyConfig("ewc", channel_separation=False, kd=False, ewc=True,
                          lock_old_fingerprints=False),
}


def strategy_config(tag: str, cs_on: bool | None = None, kd_on: bool | None = None,
                    ewc_on: bool | None = None) -> StrategyConfig:
    """Look up a tag's recipe; switch overrides are only meaningful for csil."""
    if tag not in _RECIPES:
        raise ValueError(f"unknown strategy {tag!r} (choose from {STRATEGY_TAGS})")
    cfg = _RECIPES[tag]
    if tag == "csil":
        if cs_on is not None and not cs_on:
            # without separation the old rows must stay adjustable, as in the
            # penalty-only baselines, or nothing could counter the insertion
            cfg = replace(cfg, channel_separation=False, lock_old_fingerprints=False)
        if kd_on is not None:
            cfg = replace(cfg, kd=kd_on)
        if ewc_on is not None:
            cfg = replace(cfg, ewc=ewc_on)
    elif any(v is not None for v in (cs_on, kd_on, ewc_on)):
        raise ValueError(f"switch overrides only apply to the csil tag, not {tag!r}")
    return cfg


# fresh-channel init scales, as fractions of the He row norm: aligned rows
# start small so the new stage takes little embedding energy from old stages
_CLASS_ROW_SCALE = 0.4
_COMPLEMENT_SCALE = 0.1


def _aim_fresh_channels(fresh: np.ndarray, model: Classifier, data: StageData,
                        rng: np.random.Generator) -> None:
    """Point the new embedding rows at the stage's between-class structure.

    Extractor features share a large common component (ReLU keeps them in the
    positive orthant), and rows aligned with it respond to every device alike,
    which is what lets newly inserted fingerprints claim old-class samples.
    One row per new class therefore starts along that class's mean-feature
    offset from the stage mean; the remaining rows keep their random draw but
    are projected off the mean direction. Both kinds start well below the He
    norm: small aligned channels are enough for the new classes to win, and
    they leave the old stages' share of the column norm nearly untouched.
    """
    lo, hi = data.classes
    feats = model.extractor.forward(
        batch_to_input(data.x_train, model.extractor.input_kind)).data
    mean_feat = feats.mean(axis=1)
    norm = np.linalg.norm(mean_feat)
    if norm == 0.0:
        return
    mean_dir = mean_feat / norm
    row_scale = _CLASS_ROW_SCALE * np.linalg.norm(fresh, axis=1).mean()
    for i in range(hi - lo):
        offset = feats[:, data.y_train == lo + i].mean(axis=1) - mean_feat
        offset_norm = np.linalg.norm(offset)
        if offset_norm > 0:
            fresh[i] = row_scale * offset / offset_norm
    rest = fresh[hi - lo:]
    rest -= np.outer(rest @ mean_dir, mean_dir)
    rest *= _COMPLEMENT_SCALE


def prepare_stage(model: Classifier, ctx: StageContext, scfg: StrategyConfig,
                  data: StageData, rng: np.random.Generator) -> StageContext:
    """Grow the model for one new stage and build its gradient masks.

    With channel separation the embedding gains two channels per new class
    and the fingerprint matrix grows block-diagonally; otherwise new
    fingerprint rows are appended at full width. Either way the new rows are
    initialized from the class means of the embedded stage data.
    """
    stage = ctx.stage + 1
    lo, hi = data.classes
    new_classes = hi - lo
    if lo != model.n_classes:
        raise ValueError(f"stage classes [{lo}, {hi}) must extend the current {model.n_classes}")

    old_channels = model.embed_dim
    if scfg.channel_separation:
        new_channels = 2 * new_classes
        w, b = expand_embedding(model.embedding.weight.data, model.embedding.bias.data,
                                new_channels, rng)
        _aim_fresh_channels(w[old_channels:], model, data, rng)
        fp = expand_similarity(model.head.fingerprints.data, new_classes, new_channels, rng)
        model.embedding.weight.data = w
        model.embedding.bias.data = b
        model.head.fingerprints.data = fp
        span = StageSpan(stage, (lo, hi), (old_channels, old_channels + new_channels))
    else:
        old = model.head.fingerprints.data
        fresh = rng.normal(0.0, 1.0 / np.sqrt(old_channels), (new_classes, old_channels))
        model.head.fingerprints.data = np.vstack([old, fresh])
        span = StageSpan(stage, (lo, hi), (old_channels, old_channels))

    # class-mean fingerprints from the expanded model's embedded features
    embedded = model.embed_t(data.x_train).data
    c0, c1 = span.channels if scfg.channel_separation else (0, old_channels)
    feats = [embedded[c0:c1, data.y_train == cls] for cls in range(lo, hi)]
    rows = init_new_fingerprints(feats, rng)
    model.head.fingerprints.data[lo:hi, c0:c1] = rows

    channel_map = ctx.channel_map + [span]
    masks = masks_for_stage(model, channel_map, stage, scfg.channel_separation,
                            scfg.lock_old_fingerprints)
    return StageContext(stage=stage, masks=masks, channel_map=channel_map,
                        theta_prev=ctx.theta_prev, fisher=ctx.fisher)


def run_stage(model: Classifier, ctx: StageContext, scfg: StrategyConfig,
              data: StageData, epochs: int, sgd_cfg: SgdConfig, batch_size: int,
              rng: np.random.Generator, prev_model: Classifier | None,
              weights: LossWeights = LossWeights(),
              eval_sets=None) -> tuple[StageContext, list[EpochLog]]:
    """Prepare and train one incremental stage under a strategy recipe."""
    next_ctx = prepare_stage(model, ctx, scfg, data, rng)
    logs = train_stage(model, next_ctx, data, epochs, sgd_cfg, batch_size, rng,
                       kd_on=scfg.kd, ewc_on=scfg.ewc, prev_model=prev_model,
                       weights=weights, eval_sets=eval_sets)
    return next_ctx, logs


def finetune_stage(model, ctx, data, epochs, sgd_cfg, batch_size, rng, **kw):
    return run_stage(model, ctx, strategy_config("finetune"), data, epochs,
                     sgd_cfg, batch_size, rng, prev_model=None, **kw)


def lwf_stage(model, ctx, data, epochs, sgd_cfg, batch_size, rng, prev_model, **kw):
    return run_stage(model, ctx, strategy_config("lwf"), data, epochs,
                     sgd_cfg, batch_size, rng, prev_model=prev_model, **kw)


def ewc_stage(model, ctx, data, epochs, sgd_cfg, batch_size, rng, **kw):
    return run_stage(model, ctx, strategy_config("ewc"), data, epochs,
                     sgd_cfg, batch_size, rng, prev_model=None, **kw)
