"""Loss, learning-rate plateau schedule, training loop and weight persistence."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import runtime as rt
from ..ace import AceResult, BandTable, LgfParams, PatientMap
from ..runtime import AdamState, NonFiniteError, Tensor, adam_step, dwt
from ..scene import BinauralPair, encode_ears
from .config import ModelConfig, ModelConfigError
from .network import SideOutput, as_tensors, check_params, forward_graph, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    mse_left: float
    mse_right: float
    bce_left: float
    bce_right: float
    total: float


@dataclass(frozen=True)
class TrainingExample:
    """Noisy ear waveforms with the clean ACE targets for each ear."""

    noisy_left: np.ndarray
    noisy_right: np.ndarray
    p_left: np.ndarray
    p_right: np.ndarray
    mask_left: np.ndarray
    mask_right: np.ndarray

    @classmethod
    def from_pair(cls, pair: BinauralPair, pmap: PatientMap, lgf: LgfParams = LgfParams(),
                  table: BandTable | None = None) -> TrainingExample:
        cl, cr = encode_ears(pair.clean_left, pair.clean_right, pmap, lgf, table, pair.rate)
        return cls.from_ace(pair.left, pair.right, cl, cr)

    @classmethod
    def from_ace(cls, noisy_left, noisy_right, clean_left: AceResult, clean_right: AceResult) -> TrainingExample:
        return cls(np.asarray(noisy_left, float), np.asarray(noisy_right, float),
                   clean_left.electrodogram.amplitudes, clean_right.electrodogram.amplitudes,
                   clean_left.mask, clean_right.mask)


def _align(pred: Tensor, target: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Truncate network output and ACE target to their common frame count."""
    if pred.shape[-2] != target.shape[-2]:
        raise ValueError(f"prediction has {pred.shape[-2]} channels, target {target.shape[-2]}")
    t = min(pred.shape[-1], target.shape[-1])
    return rt.crop(pred, t), target[..., :t]


def loss_terms(outputs: Sequence[SideOutput | None], p_clean: Sequence[np.ndarray | None],
               mask_clean: Sequence[np.ndarray | None], bce_weight: float = 1.0) -> tuple[Tensor, LossBreakdown]:
    """MSE on p plus weighted BCE on masker logits, summed over the ears present."""
    total = None
    parts = {}
    for side, out, p, m in zip(("left", "right"), outputs, p_clean, mask_clean):
        if out is None:
            parts[f"mse_{side}"] = parts[f"bce_{side}"] = 0.0
            continue
        if p is None or m is None:
            raise ValueError(f"missing clean target for the {side} ear")
        pred, target = _align(out.p, np.asarray(p, float))
        logits, mask = _align(out.mask_logits, np.asarray(m, float))
        mse = rt.mse(pred, Tensor(target))
        bce = rt.bce_with_logits(logits, Tensor(mask))
        parts[f"mse_{side}"], parts[f"bce_{side}"] = mse.item(), bce.item()
        term = mse + bce * bce_weight
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no outputs to score")
    return total, LossBreakdown(total=total.item(), **parts)


def loss(outputs, p_clean, mask_clean, bce_weight: float = 1.0) -> LossBreakdown:
    return loss_terms(outputs, p_clean, mask_clean, bce_weight)[1]


class PlateauSchedule:
    """Halve the learning rate after ``lr_patience`` epochs without improvement;
    stop after ``stop_patience`` such epochs. The two counters run separately and
    only the learning-rate counter resets when the rate is cut."""

    def __init__(self, lr: float, lr_patience: int = 3, stop_patience: int = 5, factor: float = 0.5,
                 min_delta: float = 0.0):
        self.lr = lr
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = np.inf
        self.lr_wait = 0
        self.stop_wait = 0
        self.stopped = False

    def step(self, val_loss: float) -> dict[str, bool]:
        """Record one epoch's validation loss. Returns which events fired."""
        improved = val_loss < self.best - self.min_delta
        halved = False
        if improved:
            self.best = val_loss
            self.lr_wait = self.stop_wait = 0
        else:
            self.lr_wait += 1
            self.stop_wait += 1
            if self.lr_wait >= self.lr_patience:
                self.lr *= self.factor
                self.lr_wait = 0
                halved = True
            if self.stop_wait >= self.stop_patience:
                self.stopped = True
        return {"improved": improved, "lr_halved": halved, "stop": self.stopped}


@dataclass
class TrainConfig:
    max_epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 2
    max_steps: int | None = None
    seed: int = 0
    lr_patience: int = 3
    stop_patience: int = 5


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    history: list[EpochRecord]
    best_epoch: int
    steps: int
    stopped_early: bool = False
    events: list[str] = field(default_factory=list)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a gradient goes non-finite. Carries the last finite state."""

    def __init__(self, message: str, params: dict[str, np.ndarray], history: list[EpochRecord]):
        super().__init__(message)
        self.params = params
        self.history = history


def _batch_graph(variant, batch: Sequence[TrainingExample], tensors, config):
    """Forward one batch; stacks along N when lengths agree, else one item at a time."""
    if len({len(ex.noisy_left) for ex in batch}) == 1:
        groups = [list(batch)]
    else:
        groups = [[ex] for ex in batch]
    total = None
    for group in groups:
        xl = np.stack([ex.noisy_left for ex in group])
        xr = np.stack([ex.noisy_right for ex in group])
        out_l, out_r = forward_graph(variant, xl, xr, tensors, config)
        p_clean = (np.stack([ex.p_left for ex in group]), np.stack([ex.p_right for ex in group]))
        m_clean = (np.stack([ex.mask_left for ex in group]), np.stack([ex.mask_right for ex in group]))
        term, _ = loss_terms((out_l, out_r), p_clean, m_clean, config.bce_weight)
        term = term * (len(group) / len(batch))
        total = term if total is None else total + term
    return total


def evaluate_loss(variant: str, params, examples: Sequence[TrainingExample], config: ModelConfig) -> float:
    """Mean total loss over examples (no gradients)."""
    tensors = as_tensors(params)
    return float(np.mean([_batch_graph(variant, [ex], tensors, config).item() for ex in examples]))


def fit(train: Sequence[TrainingExample], val: Sequence[TrainingExample], config: ModelConfig,
        variant: str, tc: TrainConfig = TrainConfig(), init: dict[str, np.ndarray] | None = None,
        on_epoch: Callable[[EpochRecord, dict], None] | None = None) -> FitResult:
    """Adam training with plateau LR halving, early stopping and best-checkpoint retention.

    ``on_epoch`` receives each epoch's record and the best parameters so far,
    which is enough to write a resumable checkpoint.
    """
    if not train or not val:
        raise ValueError("training and validation sets must be non-empty")
    params = dict(init) if init is not None else init_params(config, variant, tc.seed)
    check_params(params, config, variant)
    rng = np.random.default_rng(tc.seed)
    sched = PlateauSchedule(tc.lr, tc.lr_patience, tc.stop_patience)
    state = AdamState(lr=tc.lr)
    history: list[EpochRecord] = []
    events: list[str] = []
    best_params, best_epoch, steps = params, 0, 0

    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), tc.batch_size):
            if tc.max_steps is not None and steps >= tc.max_steps:
                break
            batch = [train[i] for i in order[start:start + tc.batch_size]]
            try:
                tensors = as_tensors(params, requires_grad=True)
                total = _batch_graph(variant, batch, tensors, config)
                rt.backward(total)
                grads = {k: t.grad for k, t in tensors.items()}
                if not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NonFiniteError("non-finite gradient")
            except NonFiniteError as exc:
                raise TrainingDiverged(f"training diverged at epoch {epoch}, step {steps + 1}: {exc}",
                                       params, history) from exc
            params, state = adam_step(params, grads, state)
            batch_losses.append(total.item())
            steps += 1
        if not batch_losses:
            break
        try:
            val_loss = evaluate_loss(variant, params, val, config)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"validation loss went non-finite at epoch {epoch}", best_params, history) from exc
        record = EpochRecord(epoch, float(np.mean(batch_losses)), val_loss, state.lr)
        history.append(record)
        ev = sched.step(val_loss)
        if ev["improved"]:
            best_params, best_epoch = params, epoch
        if ev["lr_halved"]:
            events.append(f"lr_halved@{epoch}")
            state.lr = sched.lr
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, record.train_loss, val_loss, record.lr)
        if on_epoch is not None:
            on_epoch(record, best_params)
        if ev["stop"]:
            events.append(f"early_stop@{epoch}")
            return FitResult(best_params, history, best_epoch, steps, True, events)
    return FitResult(best_params, history, best_epoch, steps, False, events)


def save_model(path: str | Path, params, config: ModelConfig, variant: str) -> tuple[Path, Path]:
    """Write ``<path>.dwt`` weights and a ``<path>.model`` manifest next to it."""
    check_params(params, config, variant)
    base = Path(path)
    weights, manifest = base.with_suffix(".dwt"), base.with_suffix(".model")
    dwt.save(weights, params)
    manifest.write_text(config.to_text(variant))
    return weights, manifest


def load_model(path: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig, str]:
    base = Path(path)
    manifest = base.with_suffix(".model")
    if not manifest.exists():
        raise ModelConfigError(f"no model manifest at {manifest}")
    config, variant = ModelConfig.from_text(manifest.read_text())
    if variant is None:
        raise ModelConfigError(f"{manifest} does not record the model variant")
    params = dwt.load(base.with_suffix(".dwt"))
    check_params(params, config, variant)
    return params, config, variant


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_loss:.9g}", f"{r.val_loss:.9g}", f"{r.lr:.9g}"])
