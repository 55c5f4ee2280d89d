"""Staged incremental-learning experiments over several strategies.

Every strategy in a run shares the same dataset and a bit-identical stage-0
model (trained once, then cloned), so differences between strategies come
only from their incremental stages. All randomness is derived from the
config seed through fixed substream tags, which makes whole reports
bit-reproducible.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .conflict import degree_of_conflict, similarity_matrix
from .continual import (
    StageContext,
    StageData,
    advance_context,
    initial_context,
    stage_snapshot,
    train_stage,
)
from .checkpoint import save_checkpoint
from .model import Classifier, build_classifier
from .optim import SgdConfig
from .report import ExperimentReport, StageMetrics, emit_report
from .signals import SignalDataset, load_dataset, make_dataset
from .strategies import prepare_stage, strategy_config

_TAG_INIT, _TAG_STAGE0, _TAG_STRATEGY = 11, 12, 13


class InvariantError(AssertionError):
    """A strict-mode consistency check failed."""


@dataclass(frozen=True)
class ExperimentConfig:
    devices: int = 20
    initial_classes: int = 8
    increment: int = 3
    stages: int = 5
    samples_per_device: int = 200
    snr_db: float = 20.0
    strategies: tuple[str, ...] = ("csil", "finetune", "lwf", "ewc")
    stage0_epochs: int = 30
    il_epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2_factor: float = 0.01
    temperature: float = 2.0
    cs_on: bool = True
    kd_on: bool = True
    ewc_on: bool = True
    extractor: str = "mlp"
    hidden_dim: int = 256
    feature_dim: int = 128
    seed: int = 0
    dataset_path: str | None = None
    strict: bool = False

    def validate(self) -> None:
        total = self.initial_classes + (self.stages - 1) * self.increment
        if self.stages < 1 or self.initial_classes < 2:
            raise ValueError("need at least 1 stage and 2 initial classes")
        if self.stages > 1 and self.increment < 1:
            raise ValueError("multi-stage schedules need increment >= 1")
        if total != self.devices:
            raise ValueError(
                f"infeasible schedule: {self.initial_classes} + "
                f"{self.stages - 1} x {self.increment} = {total} != {self.devices} devices")
        for tag in self.strategies:
            strategy_config(tag)
        SgdConfig(self.learning_rate, self.momentum, self.l2_factor)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.momentum, self.l2_factor)

    def class_spans(self) -> list[tuple[int, int]]:
        spans = [(0, self.initial_classes)]
        for _ in range(self.stages - 1):
            lo = spans[-1][1]
            spans.append((lo, lo + self.increment))
        return spans

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["strategies"] = list(self.strategies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "strategies" in d:
            d = dict(d, strategies=tuple(d["strategies"]))
        return cls(**d)


def _rng(*keys) -> np.random.Generator:
    resolved = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(resolved))


def _dataset_for(cfg: ExperimentConfig) -> SignalDataset:
    if cfg.dataset_path:
        ds = load_dataset(cfg.dataset_path)
        if ds.n_devices != cfg.devices:
            raise ValueError(f"dataset has {ds.n_devices} devices, config wants {cfg.devices}")
        return ds
    return make_dataset(cfg.devices, cfg.samples_per_device, cfg.snr_db, cfg.seed)


def _per_device_counts(model: Classifier, x: np.ndarray, y: np.ndarray,
                       devices: range) -> list[list[int]]:
    preds = model.predict(x) if len(y) else np.empty(0, dtype=np.int64)
    counts = []
    for dev in devices:
        sel = y == dev
        counts.append([dev, int((preds[sel] == dev).sum()), int(sel.sum())])
    return counts


def _weighted_acc(counts: list[list[int]], devices) -> float | None:
    rows = [c for c in counts if c[0] in devices]
    total = sum(c[2] for c in rows)
    if total == 0:
        return None
    return 100.0 * sum(c[1] for c in rows) / total


def _stage_metrics(model: Classifier, ds: SignalDataset, strategy: str, stage: int,
                   new_span: tuple[int, int], prev_avg: float | None,
                   epochs: list) -> StageMetrics:
    lo, hi = new_span
    seen = range(0, hi)
    _, _, x_val, y_val = ds.subset(seen)
    counts = _per_device_counts(model, x_val, y_val, seen)
    acc_new = _weighted_acc(counts, set(range(lo, hi)))
    acc_old = _weighted_acc(counts, set(range(0, lo)))
    acc_avg = _weighted_acc(counts, set(seen))
    fp = model.head.fingerprint_matrix()
    doc_all = degree_of_conflict(fp)
    doc_new = degree_of_conflict(fp[lo:hi]) if (stage > 0 and hi - lo >= 2) else None
    forget = None if (stage == 0 or prev_avg is None or acc_old is None) \
        else prev_avg - acc_old
    epoch_dicts = [{"epoch": e.epoch, "loss": e.loss, "loss_ce": e.loss_ce,
                    "loss_kd": e.loss_kd, "loss_ewc": e.loss_ewc, "doc": e.doc,
                    "accuracy": e.accuracy} for e in epochs]
    return StageMetrics(stage, strategy, acc_new, acc_old, acc_avg, doc_all,
                        doc_new, forget, counts, epoch_dicts)


def _check_stage_invariants(model: Classifier, ctx: StageContext,
                            pre_params: dict[str, np.ndarray], logs,
                            channel_separation: bool) -> None:
    for name, p in model.named_params().items():
        frozen = ctx.masks[name] == 0.0
        if not np.array_equal(p.data[frozen], pre_params[name][frozen]):
            raise InvariantError(f"frozen entries of {name!r} moved during stage {ctx.stage}")
    for log in logs:
        if abs(log.loss - (log.loss_ce + log.loss_kd + log.loss_ewc)) > 1e-10:
            raise InvariantError(f"loss decomposition violated at epoch {log.epoch}")
    if channel_separation:
        fp = model.head.fingerprint_matrix()
        sim = similarity_matrix(fp)
        for a in ctx.channel_map:
            for b in ctx.channel_map:
                if a.stage != b.stage:
                    block = sim[a.classes[0]:a.classes[1], b.classes[0]:b.classes[1]]
                    if np.any(block != 0.0):
                        raise InvariantError(
                            f"cross-stage similarity not exactly zero "
                            f"(stages {a.stage}/{b.stage})")


def run_experiment(cfg: ExperimentConfig, outdir=None,
                   save_checkpoints: bool = False) -> ExperimentReport:
    """Shared stage-0 training, then per-strategy incremental stages."""
    cfg.validate()
    ds = _dataset_for(cfg)
    spans = cfg.class_spans()
    report = ExperimentReport(config=cfg.to_dict())
    outdir = Path(outdir) if outdir else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)

    model0 = build_classifier("zerobias", cfg.extractor, cfg.initial_classes,
                              cfg.hidden_dim, cfg.feature_dim,
                              temperature=cfg.temperature, rng=_rng(cfg.seed, _TAG_INIT))
    ctx0 = initial_context(model0)
    x_tr, y_tr, x_va, y_va = ds.subset(range(*spans[0]))
    data0 = StageData(x_tr, y_tr, x_va, y_va, spans[0])
    logs0 = train_stage(model0, ctx0, data0, cfg.stage0_epochs, cfg.sgd(),
                        cfg.batch_size, _rng(cfg.seed, _TAG_STAGE0),
                        eval_sets={"val_new": (x_va, y_va)})
    theta0, fisher0 = stage_snapshot(model0, data0.x_val)
    metrics0 = _stage_metrics(model0, ds, "stage0", 0, spans[0], None, logs0)
    sim0 = similarity_matrix(model0.head.fingerprint_matrix())

    for tag in cfg.strategies:
        scfg = strategy_config(tag, cfg.cs_on, cfg.kd_on, cfg.ewc_on) \
            if tag == "csil" else strategy_config(tag)
        name = scfg.name
        model = model0.clone()
        ctx = StageContext(stage=0, masks=ctx0.masks, channel_map=list(ctx0.channel_map),
                           theta_prev=theta0, fisher=fisher0)
        stage_list = [replace(metrics0, strategy=name)]
        report.add_similarity(name, 0, sim0)
        if save_checkpoints and outdir:
            save_checkpoint(outdir / f"{name}_stage0.ckpt", model, ctx,
                            {"strategy": name})
        prev_avg = metrics0.acc_avg
        for stage in range(1, cfg.stages):
            lo, hi = spans[stage]
            xt, yt, xv, yv = ds.subset(range(lo, hi))
            data_k = StageData(xt, yt, xv, yv, (lo, hi))
            prev_model = model.clone()
            rng_k = _rng(cfg.seed, _TAG_STRATEGY, name, stage)
            ctx = prepare_stage(model, ctx, scfg, data_k, rng_k)
            pre_params = model.snapshot() if cfg.strict else None
            _, _, xv_old, yv_old = ds.subset(range(0, lo))
            logs = train_stage(model, ctx, data_k, cfg.il_epochs, cfg.sgd(),
                               cfg.batch_size, rng_k, kd_on=scfg.kd, ewc_on=scfg.ewc,
                               prev_model=prev_model if scfg.kd else None,
                               eval_sets={"val_new": (xv, yv), "val_old": (xv_old, yv_old)})
            if cfg.strict:
                _check_stage_invariants(model, ctx, pre_params, logs,
                                        scfg.channel_separation)
            m = _stage_metrics(model, ds, name, stage, (lo, hi), prev_avg, logs)
            stage_list.append(m)
            prev_avg = m.acc_avg
            report.add_similarity(name, stage, similarity_matrix(model.head.fingerprint_matrix()))
            theta, fisher = stage_snapshot(model, data_k.x_val)
            ctx = advance_context(ctx, theta, fisher)
            if save_checkpoints and outdir:
                save_checkpoint(outdir / f"{name}_stage{stage}.ckpt", model, ctx,
                                {"strategy": name})
        report.strategies[name] = stage_list
    return report



ABLATION_ROWS = (
    ("full", dict(cs_on=True, kd_on=True, ewc_on=True)),
    ("no_cs", dict(cs_on=False, kd_on=True, ewc_on=True)),
    ("no_ewc", dict(cs_on=True, kd_on=True, ewc_on=False)),
    ("no_kd", dict(cs_on=True, kd_on=False, ewc_on=True)),
)


def run_ablation(cfg: ExperimentConfig, outdir=None) -> dict[str, ExperimentReport]:
    """The four-row switch grid: full, no-CS, no-EWC, no-KD, one seed."""
    reports = {}
    for row, switches in ABLATION_ROWS:
        row_cfg = replace(cfg, strategies=("csil",), **switches)
        row_dir = Path(outdir) / row if outdir else None
        reports[row] = run_experiment(row_cfg, outdir=row_dir)
        if row_dir:
            emit_report(reports[row], "json", row_dir)
            emit_report(reports[row], "csv", row_dir)
    return reports
