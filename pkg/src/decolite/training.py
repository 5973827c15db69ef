"""Cross-entropy and decorrelated training of LITE models.

The feature-orthogonality loss measures, per sample, the absolute
pairwise cosine similarities between the channel rows of two feature maps
and sums them over distinct channel pairs. Decorrelated training adds the
average of that loss against every previously trained (frozen) model to
the cross-entropy objective, weighted by ``alpha``:

    total = alpha * cross_entropy + (1 - alpha) * orthogonality

Training runs for a fixed number of epochs with Adam, plateau-based lr
reduction on the total training loss, and a best-training-loss checkpoint
policy. Everything is deterministic given the config seed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path

import numpy as np

from .data import TimeSeriesDataset, batch_indices
from .errors import ConfigError, NumericError, ShapeError, UsageError
from .model import LiteArchitectureConfig, LiteModel, init_model, save_model
from .optim import Adam, ReduceLROnPlateau
from .tensor import (Tensor, absolute, as_tensor, backward, cosine_similarity_matrix,
                     softmax_cross_entropy, sum_all)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "orthogonality_loss",
    "sequential_orthogonality_loss",
    "total_loss",
    "train_base",
    "train_decorrelated",
    "build_ensemble",
    "EnsembleBuild",
]

# Above this many bytes the per-model feature cache for frozen
# predecessors is skipped and features are recomputed per batch.
_FEATURE_CACHE_LIMIT = 1_500_000_000


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters for one model."""

    alpha: float = 0.5
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    min_lr: float = 1e-4
    epochs: int = 1500
    batch_size: int = 64
    seed: int = 0
    orth_normalization: str = "mean"  # "mean": average over channel pairs; "raw": plain sum
    include_diagonal: bool = False    # study switch; the loss skips i == j by default
    checkpoint_policy: str = "best-train-loss"

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.orth_normalization not in ("mean", "raw"):
            raise ConfigError("orth_normalization must be 'mean' or 'raw'")
        if self.checkpoint_policy != "best-train-loss":
            raise ConfigError("only the best-train-loss checkpoint policy is supported")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    ce_loss: float
    orth_loss: float
    total_loss: float
    train_accuracy: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_HEADER = "epoch,lr,ce_loss,orth_loss,total_loss,train_acc,seconds"

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def to_csv(self, path) -> None:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.lr:.10g},{r.ce_loss:.17g},{r.orth_loss:.17g},"
                         f"{r.total_loss:.17g},{r.train_accuracy:.17g},{r.seconds:.6f}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# losses


def orthogonality_loss(features_a, features_b, mode: str = "mean",
                       eps: float = 1e-8, include_diagonal: bool = False) -> Tensor:
    """Feature-orthogonality penalty between two (B, C, T) feature maps.

    Per sample, the C x C cosine-similarity matrix between the channel
    rows of ``features_a`` and ``features_b`` is formed and the absolute
    values of its distinct-pair entries (i != j) are summed. "raw" mode
    returns the batch mean of that per-sample sum; "mean" mode divides
    additionally by the number of summed pairs. Always non-negative, and
    zero when C == 1 (no distinct pairs).
    """
    a, b = as_tensor(features_a), as_tensor(features_b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError("orthogonality_loss expects (B, C, T) feature maps")
    if a.shape != b.shape:
        raise ShapeError(f"feature shapes differ: {a.shape} vs {b.shape}")
    if mode not in ("mean", "raw"):
        raise ConfigError(f"unknown normalization mode {mode!r}")
    bsz, c, _ = a.shape
    if c == 1 and not include_diagonal:
        return Tensor(np.asarray(0.0))

    sim = cosine_similarity_matrix(a, b, eps=eps)
    mask = np.ones((c, c)) if include_diagonal else 1.0 - np.eye(c)
    penalty = sum_all(absolute(sim) * mask) * (1.0 / bsz)
    if mode == "mean":
        penalty = penalty * (1.0 / mask.sum())
    return penalty


def sequential_orthogonality_loss(features_new, prev_features: list, mode: str = "mean",
                                  eps: float = 1e-8, include_diagonal: bool = False) -> Tensor:
    """Mean orthogonality loss of a new feature map against earlier models'."""
    if not prev_features:
        raise UsageError("sequential loss needs at least one previous feature map")
    terms = [orthogonality_loss(features_new, f, mode, eps, include_diagonal)
             for f in prev_features]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def total_loss(ce, orth, alpha: float) -> Tensor:
    """alpha-weighted blend ``alpha * ce + (1 - alpha) * orth``.

    At the boundaries the surviving term is returned unchanged (the same
    node, not a rescaled copy), so alpha=1 training is exactly plain
    cross-entropy training.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    ce = ce if isinstance(ce, Tensor) else Tensor(np.asarray(float(ce)))
    orth = orth if isinstance(orth, Tensor) else Tensor(np.asarray(float(orth)))
    if alpha == 1.0:
        return ce
    if alpha == 0.0:
        return orth
    return ce * alpha + orth * (1.0 - alpha)


# ---------------------------------------------------------------------------
# training loops


def _check_feature_compat(model: LiteModel, prev: list[LiteModel], ds) -> None:
    for i, p in enumerate(prev):
        if p.config.n_filters != model.config.n_filters:
            raise ConfigError(f"previous model {i} produces {p.config.n_filters} feature "
                              f"channels, the new model produces {model.config.n_filters}")
        if p.n_classes != model.n_classes:
            raise ConfigError(f"previous model {i} was trained with {p.n_classes} classes, "
                              f"dataset has {model.n_classes}")


def _frozen_features(prev: list[LiteModel], ds: TimeSeriesDataset):
    """Eval-mode feature maps of frozen models over the whole training set.

    Eval forwards are pure per sample, so caching them once is equivalent
    to recomputing per batch. Falls back to per-batch computation when the
    cache would be too large.
    """
    total = len(prev) * ds.n * prev[0].config.n_filters * ds.length * 8 if prev else 0
    if total > _FEATURE_CACHE_LIMIT:
        return None
    cached = []
    for p in prev:
        _, feats = p.forward(ds.X, mode="eval")
        cached.append(feats.data)
    return cached


def _train_loop(ds: TimeSeriesDataset, config: TrainConfig, model: LiteModel,
                prev_models: list[LiteModel], out_dir=None):
    config.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    use_orth = bool(prev_models)
    if use_orth:
        _check_feature_compat(model, prev_models, ds)
    cached = _frozen_features(prev_models, ds) if use_orth else None

    opt = Adam(model.trainable_parameters(), lr=config.lr)
    sched = ReduceLROnPlateau(opt, factor=config.plateau_factor,
                              patience=config.plateau_patience, min_lr=config.min_lr)
    log = TrainLog()
    best = np.inf
    best_state = model.state_arrays()

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        lr_now = opt.lr
        ce_sum = orth_sum = total_sum = 0.0
        correct = 0
        for idx in batch_indices(ds.n, config.batch_size, config.seed, epoch):
            xb = Tensor(ds.X[idx])
            try:
                logits, feats = model.forward(xb, mode="train")
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            ce = softmax_cross_entropy(logits, ds.Y[idx])
            if use_orth:
                if cached is not None:
                    prev_feats = [Tensor(f[idx]) for f in cached]
                else:
                    prev_feats = [p.forward(xb, mode="eval")[1].detach()
                                  for p in prev_models]
                # A zero-weight penalty must not touch the gradient graph,
                # so detach it when only cross-entropy counts.
                feats_for_orth = feats.detach() if config.alpha == 1.0 else feats
                orth = sequential_orthogonality_loss(
                    feats_for_orth, prev_feats, mode=config.orth_normalization,
                    include_diagonal=config.include_diagonal)
                loss = total_loss(ce, orth, config.alpha)
                orth_value = orth.item()
            else:
                loss = ce
                orth_value = 0.0
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericError(f"training loss diverged at epoch {epoch}")
            opt.zero_grad()
            backward(loss)
            opt.step()

            nb = idx.size
            ce_sum += ce.item() * nb
            orth_sum += orth_value * nb
            total_sum += loss_value * nb
            correct += int((logits.data.argmax(axis=1) == ds.y[idx]).sum())

        epoch_total = total_sum / ds.n
        log.append(EpochRecord(epoch=epoch, lr=lr_now, ce_loss=ce_sum / ds.n,
                               orth_loss=orth_sum / ds.n, total_loss=epoch_total,
                               train_accuracy=correct / ds.n,
                               seconds=time.perf_counter() - tic))
        if epoch_total < best:
            best = epoch_total
            best_state = model.state_arrays()
        sched.step(epoch_total)

    if out_dir is not None:
        save_model(model, out_dir / "checkpoint_last.ckpt")
    model.load_state_arrays(best_state)
    if out_dir is not None:
        save_model(model, out_dir / "checkpoint_best.ckpt")
        log.to_csv(out_dir / "train_log.csv")
    return model, log


def train_base(ds: TimeSeriesDataset, config: TrainConfig,
               arch: LiteArchitectureConfig | None = None, out_dir=None):
    """Train one model with cross-entropy only; returns the best checkpoint.

    The log's orthogonality column is zero throughout. When ``out_dir`` is
    given, best/last checkpoints and the log CSV are written there.
    """
    arch = arch or LiteArchitectureConfig()
    model = init_model(arch, ds.n_classes, config.seed)
    return _train_loop(ds, config, model, [], out_dir)


def train_decorrelated(ds: TimeSeriesDataset, config: TrainConfig,
                       prev_models: list[LiteModel],
                       arch: LiteArchitectureConfig | None = None, out_dir=None):
    """Train one model whose features are pushed orthogonal to earlier models.

    ``prev_models`` stay frozen: their features are computed in eval mode
    with no gradient and their parameters are untouched. The new model is
    seeded from ``config.seed``, which callers pair with the seed of the
    corresponding plain model so that both start bit-identical.
    """
    if not prev_models:
        raise UsageError("decorrelated training requires at least one previous model")
    arch = arch or prev_models[0].config
    model = init_model(arch, ds.n_classes, config.seed)
    return _train_loop(ds, config, model, list(prev_models), out_dir)


@dataclass
class EnsembleBuild:
    models: list[LiteModel]
    logs: list[TrainLog]
    metadata: dict


def build_ensemble(ds: TimeSeriesDataset, config: TrainConfig, size: int,
                   kind: str, arch: LiteArchitectureConfig | None = None,
                   seeds: list[int] | None = None, out_dirs=None) -> EnsembleBuild:
    """Train a ``size``-member ensemble of the given kind.

    "base" trains every member independently with cross-entropy, one seed
    per member. "deco" trains the first seed's member with cross-entropy
    as the fixed reference, then each further member sequentially with the
    orthogonality penalty against all members trained before it.
    """
    if kind not in ("base", "deco"):
        raise ConfigError(f"ensemble kind must be 'base' or 'deco', got {kind!r}")
    if size < 1:
        raise ConfigError("ensemble size must be positive")
    if not 2 <= size <= 5:
        warnings.warn(f"ensemble size {size} is outside the studied range 2..5",
                      stacklevel=2)
    seeds = list(range(size)) if seeds is None else list(seeds)
    if len(seeds) != size or len(set(seeds)) != size:
        raise ConfigError(f"need {size} distinct seeds, got {seeds}")
    if out_dirs is not None and len(out_dirs) != size:
        raise ConfigError("out_dirs must name one directory per member")

    models: list[LiteModel] = []
    logs: list[TrainLog] = []
    for i, seed in enumerate(seeds):
        member_cfg = replace(config, seed=seed)
        out_dir = out_dirs[i] if out_dirs is not None else None
        if kind == "base" or i == 0:
            model, log = train_base(ds, member_cfg, arch, out_dir)
        else:
            model, log = train_decorrelated(ds, member_cfg, models.copy(), arch, out_dir)
        models.append(model)
        logs.append(log)

    name = f"{'Deco-' if kind == 'deco' else ''}LITETime-{size}"
    metadata = {
        "name": name,
        "dataset": ds.name,
        "kind": kind,
        "size": size,
        "seeds": seeds,
        "config": asdict(config),
    }
    return EnsembleBuild(models=models, logs=logs, metadata=metadata)
