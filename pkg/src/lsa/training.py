"""Loss assembly, the training loop with a two-group optimizer, metrics,
and the two sweep drivers (static side-weight grid, multi-seed)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import NUM_CLASSES, DataError, Dataset, Polarity, load_dataset
from .distance import load_parses
from .encoder import ConfigError, Vocabulary
from .optim import AdamW, ParamGroup
from .window import Model, ModelConfig

logger = logging.getLogger(__name__)


class NumericError(Exception):
    """Non-finite loss or other numeric failure during training."""


@dataclass
class TrainConfig:
    variant: str = "lsa_t"
    k: int = 1
    alpha: float = 3.0
    max_len: int = 80
    batch: int = 16
    encoder_lr: float = 1e-3
    eta_lr: float = 0.01
    lambda_reg: float = 1e-5
    lambda_eta: float = 1e-5
    epochs: int = 20
    seed: int = 0
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    no_dwa: bool = False
    la_only: bool = False
    ra_only: bool = False
    backbone_only: bool = False
    frozen_eta: tuple[float, float] | None = None
    train_path: str = ""
    valid_path: str | None = None
    test_path: str | None = None
    parse_path: str | None = None
    holdout_fraction: float = 0.1

    def validate(self) -> None:
        if not self.train_path:
            raise ConfigError("train_path is required")
        for name in ("batch", "epochs"):
            if getattr(self, name) < 0 or (name == "batch" and self.batch < 1):
                raise ConfigError(f"{name} must be positive")
        for name in ("encoder_lr", "eta_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("lambda_reg", "lambda_eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ConfigError("holdout_fraction must be in (0, 1)")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            k=self.k,
            alpha=self.alpha,
            max_len=self.max_len,
            d_model=self.d_model,
            layers=self.layers,
            heads=self.heads,
            ffn_mult=self.ffn_mult,
            no_dwa=self.no_dwa,
            la_only=self.la_only,
            ra_only=self.ra_only,
            backbone_only=self.backbone_only,
            frozen_eta=self.frozen_eta,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "frozen_eta" and value is not None:
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            value = d[f.name]
            if f.name == "frozen_eta" and value is not None:
                value = tuple(float(x) for x in value)
            kwargs[f.name] = value
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        raw = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
        return cls.from_dict(_coerce_config_values(raw))


def _coerce_config_values(raw: dict[str, str]) -> dict:
    """Coerce flat key=value strings onto TrainConfig field types."""
    typed: dict = {}
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    for key, value in raw.items():
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        kind = kinds[key]
        if value == "":
            typed[key] = None
        elif key == "frozen_eta":
            typed[key] = [float(x) for x in value.split(",")]
        elif kind == "int":
            typed[key] = int(value)
        elif kind == "float":
            typed[key] = float(value)
        elif kind == "bool":
            typed[key] = value.lower() in ("1", "true", "yes")
        else:
            typed[key] = value
    return typed


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: list[ClassScores]
    n_examples: int


def compute_metrics(golds, preds) -> Metrics:
    """Accuracy and macro-F1 over class indices; absent classes score 0."""
    golds = list(golds)
    preds = list(preds)
    if not golds or len(golds) != len(preds):
        raise ValueError("golds and preds must be equal-length and non-empty")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for g, p in zip(golds, preds):
        confusion[g][p] += 1
    per_class = []
    for c in range(NUM_CLASSES):
        tp = confusion[c][c]
        precision = tp / confusion[:, c].sum() if confusion[:, c].sum() else 0.0
        recall = tp / confusion[c].sum() if confusion[c].sum() else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        per_class.append(ClassScores(float(precision), float(recall), float(f1)))
    accuracy = float(np.trace(confusion) / len(golds))
    macro_f1 = float(sum(cs.f1 for cs in per_class) / NUM_CLASSES)
    return Metrics(accuracy, macro_f1, per_class, len(golds))


# ---------------------------------------------------------------------------
# Loss


def total_loss(
    probs: list[Tensor],
    golds: list[int],
    main_params: dict[str, Tensor],
    eta_values: tuple[float, float],
    lambda_reg: float,
    lambda_eta: float,
) -> Tensor:
    """Cross-entropy summed over the batch plus both L2 terms.

    The regularizers enter the reported value (recomputed from current
    parameter values every step); their gradient path is the optimizer's
    decoupled weight decay, so only the cross-entropy part backpropagates.
    """
    if not probs:
        raise ValueError("empty batch")
    total = ad.cross_entropy(probs[0], golds[0])
    for p, g in zip(probs[1:], golds[1:]):
        total = ad.add(total, ad.cross_entropy(p, g))
    reg = lambda_reg * sum(
        float(np.sum(t.values * t.values)) for t in main_params.values()
    )
    reg += lambda_eta * (eta_values[0] ** 2 + eta_values[1] ** 2)
    return ad.add(total, Tensor(np.array([reg])))


# ---------------------------------------------------------------------------
# Evaluation slices


def _cluster_sizes(example) -> list[int]:
    sizes = [0] * len(example.aspects)
    i = 0
    while i < len(example.aspects):
        j = i
        while (
            j + 1 < len(example.aspects)
            and example.aspects[j + 1].polarity == example.aspects[i].polarity
        ):
            j += 1
        for t in range(i, j + 1):
            sizes[t] = j - i + 1
        i = j + 1
    return sizes


def _pair_in_slice(example, aspect_idx, slice_: str | None) -> bool:
    if slice_ is None:
        return True
    if slice_ == "implicit":
        return example.aspects[aspect_idx].implicit
    if slice_ == "explicit":
        return not example.aspects[aspect_idx].implicit
    if slice_ == "mono":
        return len(example.aspects) == 1
    if slice_.startswith("cluster"):
        label = slice_[len("cluster") :]
        size = _cluster_sizes(example)[aspect_idx]
        if label == "5+":
            return size >= 5
        return size == int(label)
    raise ConfigError(f"unknown slice {slice_!r}")


def evaluate(
    model: Model, dataset: Dataset, trees=None, slice_: str | None = None
) -> Metrics:
    """Metrics over (example, aspect) pairs, optionally filtered to a slice."""
    golds, preds = [], []
    for example in dataset.examples:
        wanted = [
            j
            for j in range(len(example.aspects))
            if _pair_in_slice(example, j, slice_)
        ]
        if not wanted:
            continue
        probs = model.forward_example(example, trees)
        for j in wanted:
            golds.append(example.aspects[j].polarity.index)
            preds.append(int(np.argmax(probs[j].values)))
    if not golds:
        raise DataError(f"slice {slice_!r} selects no pairs")
    return compute_metrics(golds, preds)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    model: Model
    vocab: Vocabulary
    trajectory: list[tuple[int, float, float]]
    metrics_rows: list[tuple[int, str, float, float]]  # epoch, split, acc, macro_f1
    epoch_losses: list[float]
    best_epoch: int
    final_metrics: Metrics | None


def _load_splits(config: TrainConfig):
    train = load_dataset(config.train_path)
    valid = load_dataset(config.valid_path) if config.valid_path else None
    test = load_dataset(config.test_path) if config.test_path else None
    trees = load_parses(config.parse_path) if config.parse_path else None
    return train, valid, test, trees


def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: t.values.copy() for name, t in model.named_parameters().items()}


def _restore(model: Model, snapshot: dict[str, np.ndarray]) -> None:
    for name, t in model.named_parameters().items():
        t.values[...] = snapshot[name]


def train(config: TrainConfig) -> TrainResult:
    """Deterministic training under (config, seed); the best checkpoint by
    validation accuracy is retained (ties resolved to the lower epoch)."""
    config.validate()
    train_set, valid_set, test_set, trees = _load_splits(config)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    if valid_set is None:
        order = rng.permutation(len(train_set.examples))
        n_hold = max(1, int(round(config.holdout_fraction * len(order))))
        hold = set(order[:n_hold].tolist())
        valid_set = Dataset([train_set.examples[i] for i in sorted(hold)])
        train_set = Dataset(
            [ex for i, ex in enumerate(train_set.examples) if i not in hold]
        )

    vocab = Vocabulary.build(ex.tokens for ex in train_set.examples)
    model = Model(config.model_config(), vocab, rng)

    groups = [ParamGroup(model.main_parameters(), config.encoder_lr, config.lambda_reg)]
    eta_params = model.eta_parameters()
    if eta_params:
        groups.append(ParamGroup(eta_params, config.eta_lr, config.lambda_eta))
    optimizer = AdamW(groups)

    trajectory = [(0, *model.eta_values())]
    metrics_rows: list[tuple[int, str, float, float]] = []
    epoch_losses: list[float] = []
    best = None  # (acc, epoch, snapshot)
    step = 0

    train_examples = [ex for ex in train_set.examples if ex.aspects]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train_examples))
        epoch_golds, epoch_preds = [], []
        loss_sum, pair_count = 0.0, 0
        cursor = 0
        while cursor < len(perm):
            group, n_pairs = [], 0
            while cursor < len(perm) and n_pairs < config.batch:
                ex = train_examples[perm[cursor]]
                group.append(ex)
                n_pairs += len(ex.aspects)
                cursor += 1
            tape = ad.Tape()
            with tape:
                probs, golds = [], []
                for ex in group:
                    for j, p in enumerate(model.forward_example(ex, trees)):
                        probs.append(p)
                        golds.append(ex.aspects[j].polarity.index)
                        epoch_golds.append(golds[-1])
                        epoch_preds.append(int(np.argmax(p.values)))
                loss = total_loss(
                    probs,
                    golds,
                    model.main_parameters(),
                    model.eta_values(),
                    config.lambda_reg,
                    config.lambda_eta,
                )
            if not np.isfinite(loss.values[0]):
                raise NumericError(f"non-finite loss at step {step + 1}")
            optimizer.zero_grad()
            tape.backward(loss)
            optimizer.step()
            step += 1
            trajectory.append((step, *model.eta_values()))
            loss_sum += float(loss.values[0])
            pair_count += len(golds)

        epoch_losses.append(loss_sum / max(1, pair_count))
        train_metrics = compute_metrics(epoch_golds, epoch_preds)
        valid_metrics = evaluate(model, valid_set, trees)
        metrics_rows.append(
            (epoch, "train", train_metrics.accuracy, train_metrics.macro_f1)
        )
        metrics_rows.append(
            (epoch, "valid", valid_metrics.accuracy, valid_metrics.macro_f1)
        )
        logger.info(
            "epoch %d: loss %.4f, valid acc %.4f", epoch, epoch_losses[-1],
            valid_metrics.accuracy,
        )
        if best is None or valid_metrics.accuracy > best[0]:
            best = (valid_metrics.accuracy, epoch, _snapshot(model))

    best_epoch = 0
    if best is not None:
        best_epoch = best[1]
        _restore(model, best[2])

    final = None
    if config.epochs > 0:
        if test_set is not None:
            final = evaluate(model, test_set, trees)
            metrics_rows.append((best_epoch, "test", final.accuracy, final.macro_f1))
        else:
            final = evaluate(model, valid_set, trees)

    return TrainResult(
        model=model,
        vocab=vocab,
        trajectory=trajectory,
        metrics_rows=metrics_rows,
        epoch_losses=epoch_losses,
        best_epoch=best_epoch,
        final_metrics=final,
    )


# ---------------------------------------------------------------------------
# Sweeps


def static_eta_sweep(config: TrainConfig, grid) -> list[tuple[float, float, float, float]]:
    """Train once per static (eta_l, 1 - eta_l) grid point with the
    learnable weighting disabled; rows are (eta_l, eta_r, acc, macro_f1)."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty eta grid")
    rows = []
    for eta_l in grid:
        eta_l = float(eta_l)
        run_cfg = replace(config, no_dwa=True, frozen_eta=(eta_l, 1.0 - eta_l))
        result = train(run_cfg)
        m = result.final_metrics
        if m is None:
            raise ConfigError("eta sweep needs at least one epoch")
        rows.append((eta_l, 1.0 - eta_l, m.accuracy, m.macro_f1))
    return rows


@dataclass
class SweepSummary:
    rows: list[tuple[int, float, float]]  # seed, acc, macro_f1
    median_acc: float
    iqr_acc: float
    median_f1: float
    iqr_f1: float


def seed_sweep(config: TrainConfig, seeds) -> SweepSummary:
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("seed sweep needs at least two seeds")
    rows = []
    for seed in seeds:
        result = train(replace(config, seed=int(seed)))
        m = result.final_metrics
        if m is None:
            raise ConfigError("seed sweep needs at least one epoch")
        rows.append((int(seed), m.accuracy, m.macro_f1))
    accs = np.array([r[1] for r in rows])
    f1s = np.array([r[2] for r in rows])

    def iqr(x):
        return float(np.percentile(x, 75) - np.percentile(x, 25))

    return SweepSummary(
        rows=rows,
        median_acc=float(np.median(accs)),
        iqr_acc=iqr(accs),
        median_f1=float(np.median(f1s)),
        iqr_f1=iqr(f1s),
    )
