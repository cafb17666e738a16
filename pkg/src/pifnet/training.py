"""Training protocol: balanced accuracy, early stopping, repeated runs and reporting."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import VolumeRecord, augment, check_augment_mode, check_no_leakage, normalize_max
from .errors import ConfigError, LeakageError
from .layers import Adam, bce_loss
from .model import ModelSpec, Network, count_parameters
from .tensor import Rng, Tensor, backward

log = logging.getLogger(__name__)

BALANCE_TOLERANCE = 0.10
THRESHOLD = 0.5


def balanced_accuracy(predictions, labels, threshold: float = THRESHOLD) -> float:
    """Mean of sensitivity and specificity; scores >= ``threshold`` count as class 1."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.shape != y.shape:
        raise ConfigError(f"{p.size} predictions for {y.size} labels")
    pos, neg = y == 1, y == 0
    if not pos.any() or not neg.any():
        raise ConfigError("balanced accuracy needs at least one sample of each class")
    hit = p >= threshold
    return float(0.5 * (hit[pos].mean() + (~hit[neg]).mean()))


def early_stopping_check(history: Sequence[float], patience: int) -> bool:
    """True when the best value has not strictly improved for ``patience`` epochs."""
    if not history:
        raise ConfigError("early stopping needs a non-empty history")
    if patience < 1:
        raise ConfigError("patience must be at least 1")
    best = int(np.argmax(history))  # first occurrence: later ties are not improvements
    return len(history) - 1 - best >= patience


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 8
    seed: int = 0
    repeats: int = 10
    augment: str = "none"
    metric: str = "balanced_accuracy"

    def validate(self) -> None:
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1 or self.repeats < 1:
            raise ConfigError("patience, max_epochs, batch_size and repeats must be at least 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")
        if self.metric != "balanced_accuracy":
            raise ConfigError(f"unsupported early-stopping metric {self.metric!r}")
        check_augment_mode(self.augment, False)


class DataSplits:
    """Max-normalised arrays for the train/val/test splits.

    The test split is only reachable through :meth:`read_test`, which counts
    its callers.
    """

    def __init__(self, records: Sequence[VolumeRecord]):
        check_no_leakage(records)
        parts = {}
        for name in ("train", "val", "test"):
            sel = [r for r in records if r.split == name]
            if not sel:
                raise ConfigError(f"split {name!r} is empty")
            x = np.stack([normalize_max(np.asarray(r.volume, dtype=np.float64)) for r in sel])
            if x.ndim == 4:
                x = x[:, None]
            parts[name] = (x, np.array([r.label for r in sel], dtype=np.float64))
        self.train_x, self.train_y = parts["train"]
        self.val_x, self.val_y = parts["val"]
        self._test = parts["test"]
        self.test_reads = 0

    def read_test(self) -> tuple[np.ndarray, np.ndarray]:
        self.test_reads += 1
        return self._test

    @property
    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train_y), "val": len(self.val_y), "test": len(self._test[1])}


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_bacc: float
    val_loss: float
    val_bacc: float


@dataclass
class RepeatResult:
    model: str
    seed: int
    epochs: list[EpochLog]
    best_epoch: int
    stop_epoch: int
    test_bacc: float
    test_reads: int = 1
    best_state: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def best_val_bacc(self) -> float:
        return self.epochs[self.best_epoch - 1].val_bacc


def predict(net: Network, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    out = [net.forward(Tensor(x[i:i + batch_size])).data.reshape(-1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def _loss_value(p: np.ndarray, y: np.ndarray) -> float:
    return bce_loss(Tensor(p), y).item()


def train_one(spec: ModelSpec, data: DataSplits, config: TrainConfig, seed: int,
              on_epoch: Callable[[EpochLog], None] | None = None) -> RepeatResult:
    """Train one He-initialised network with early stopping and score it on the test split."""
    config.validate()
    spec.shapes()
    check_augment_mode(config.augment, spec.has_pif)
    rng = Rng(seed)
    net = Network(spec, rng.child(0))
    shuffle_rng, aug_rng, drop_rng = rng.child(1), rng.child(2), rng.child(3)
    opt = Adam(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    n = len(data.train_y)
    history: list[float] = []
    epochs: list[EpochLog] = []
    best_state = net.get_state()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        preds = np.empty(n)
        losses = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = data.train_x[idx]
            if config.augment != "none":
                xb = np.stack([augment(v, config.augment, aug_rng, spec.has_pif) for v in xb])
            out = net.forward(Tensor(xb), training=True, rng=drop_rng)
            loss = bce_loss(out, data.train_y[idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
            preds[idx] = out.data.reshape(-1)
            losses += loss.item() * len(idx)
        val_p = predict(net, data.val_x)
        entry = EpochLog(epoch, losses / n, balanced_accuracy(preds, data.train_y),
                         _loss_value(val_p, data.val_y), balanced_accuracy(val_p, data.val_y))
        epochs.append(entry)
        if on_epoch:
            on_epoch(entry)
        if not history or entry.val_bacc > max(history):
            best_state = net.get_state()
        history.append(entry.val_bacc)
        if early_stopping_check(history, config.patience):
            break
    best_epoch = int(np.argmax(history)) + 1
    net.set_state(best_state)
    reads = data.test_reads
    test_x, test_y = data.read_test()
    if data.test_reads - reads != 1:
        raise LeakageError("test split read more than once in a repeat")
    test_bacc = balanced_accuracy(predict(net, test_x), test_y)
    return RepeatResult(spec.name, seed, epochs, best_epoch, epoch, test_bacc, 1, best_state)


# ---------------------------------------------------------------------------
# repeated experiments

@dataclass
class ModelSummary:
    model: str
    bacc_mean: float
    bacc_std: float
    stop_mean: float
    stop_std: float
    n: int


def summarize(results: Sequence[RepeatResult]) -> ModelSummary:
    acc = np.array([r.test_bacc for r in results])
    stop = np.array([r.stop_epoch for r in results], dtype=np.float64)
    return ModelSummary(results[0].model, float(acc.mean()), float(acc.std()),
                        float(stop.mean()), float(stop.std()), len(results))


LOG_COLUMNS = ("model", "repeat", "seed", "stop_epoch", "best_epoch", "best_val_bacc", "test_bacc")


@dataclass
class RunReport:
    """Per-repeat results for each model plus the derived aggregate table."""

    results: dict[str, list[RepeatResult]]
    param_counts: dict[str, int] = field(default_factory=dict)

    def summaries(self) -> list[ModelSummary]:
        return [summarize(rs) for rs in self.results.values()]

    def table(self) -> str:
        rows = [("Model", "Params", "Bal. acc. (std)", "Early stopping iter.")]
        for s in self.summaries():
            rows.append((s.model, str(self.param_counts.get(s.model, "")),
                         f"{100 * s.bacc_mean:.2f}% ({100 * s.bacc_std:.2f})", f"{s.stop_mean:.1f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"

    def log_lines(self) -> list[str]:
        out = ["\t".join(LOG_COLUMNS)]
        for model, rs in self.results.items():
            for i, r in enumerate(rs):
                out.append(f"{model}\t{i}\t{r.seed}\t{r.stop_epoch}\t{r.best_epoch}\t"
                           f"{r.best_val_bacc!r}\t{r.test_bacc!r}")
        return out


def parameter_balance(baseline: ModelSpec, pif: ModelSpec) -> float:
    """Relative difference in learnable parameters, (pif - baseline) / baseline."""
    b = count_parameters(baseline)
    return (count_parameters(pif) - b) / b


def run_experiment(baseline: ModelSpec, pif: ModelSpec, data: DataSplits, config: TrainConfig,
                   on_repeat: Callable[[RepeatResult], None] | None = None) -> RunReport:
    """Train both models for ``config.repeats`` paired seeds (``config.seed + r``)."""
    config.validate()
    for spec in (baseline, pif):
        spec.shapes()
        check_augment_mode(config.augment, spec.has_pif)
    delta = parameter_balance(baseline, pif)
    if abs(delta) > BALANCE_TOLERANCE:
        warnings.warn(f"parameter counts differ by {100 * delta:+.1f}% (limit 10%)", stacklevel=2)
    report = RunReport({baseline.name: [], pif.name: []},
                       {s.name: count_parameters(s) for s in (baseline, pif)})
    for r in range(config.repeats):
        for spec in (baseline, pif):
            result = train_one(spec, data, config, config.seed + r)
            log.info("%s repeat %d: stop %d, test bal. acc. %.4f", spec.name, r, result.stop_epoch, result.test_bacc)
            report.results[spec.name].append(result)
            if on_repeat:
                on_repeat(result)
    return report
