"""Three-stage knowledge transfer.

Stage A trains the teacher with cross entropy. Stage B freezes the teacher
and fits the student's feature map to it with L1 only. Stage C fine-tunes
the student on ``CE + alpha * L1``, starting from the stage-B weights with a
freshly initialized classifier head.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from vser.errors import InvalidConfig, InvalidDataset, InvalidRatio, StratifyError
from vser.models import (
    ModelSpec,
    VisionTransformer,
    build_model,
    check_matchable,
    load_model,
    parameter_digest,
    save_model,
)
from vser.nn.functional import cross_entropy, l1_loss
from vser.nn.optim import Adam

log = logging.getLogger(__name__)

STAGES = ("A_teacher", "B_match", "C_student")
LOG_FIELDS = ("epoch", "split", "lr", "ce", "l1", "total", "wa")


@dataclass(frozen=True)
class StageConfig:
    stage: str
    epochs: int = 50
    batch_size: int = 4
    lr0: float = 1e-4
    lr_halving_period: int = 10
    alpha: float = 10.0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidConfig(f"unknown stage {self.stage!r}")
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr_halving_period <= 0:
            raise InvalidConfig(f"epochs, batch_size and lr_halving_period must be positive: {self}")
        if self.alpha < 0 or self.lr0 <= 0:
            raise InvalidConfig(f"alpha must be >= 0 and lr0 > 0: {self}")

    @property
    def loss_weights(self) -> tuple[float, float]:
        """(CE weight, L1 weight) for this stage."""
        return {"A_teacher": (1.0, 0.0), "B_match": (0.0, 1.0), "C_student": (1.0, self.alpha)}[self.stage]


def lr_at(epoch: int, cfg: StageConfig) -> float:
    """Step schedule: ``lr0`` halved every ``lr_halving_period`` epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise InvalidConfig(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halving_period)


@dataclass
class ImageSet:
    images: np.ndarray  # [N, 128, 128] float32
    labels: np.ndarray  # [N] int64
    clip_ids: list[str]
    label_names: list[str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.images) == len(self.labels) == len(self.clip_ids)):
            raise InvalidDataset("images, labels and clip ids differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def subset(self, idx) -> ImageSet:
        idx = np.asarray(idx, dtype=np.int64)
        return ImageSet(self.images[idx], self.labels[idx], [self.clip_ids[i] for i in idx], self.label_names)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    lr: float
    ce: float
    l1: float
    total: float
    wa: float

    def to_line(self) -> str:
        return "\t".join(
            [str(self.epoch), self.split, repr(self.lr), repr(self.ce), repr(self.l1), repr(self.total), repr(self.wa)]
        )


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    ce: float
    l1: float
    total: float


@dataclass
class TrainRun:
    stage_config: StageConfig
    seed: int
    dataset_ref: str = ""
    metrics_log: list[EpochRecord] = field(default_factory=list)
    batch_log: list[BatchRecord] = field(default_factory=list)
    checkpoints: dict[str, Path] = field(default_factory=dict)
    best_epoch: int = -1
    best_state: dict | None = field(default=None, repr=False)
    teacher_digest: str | None = None

    def records(self, split: str) -> list[EpochRecord]:
        return [r for r in self.metrics_log if r.split == split]


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------


def stratified_split(labels: Sequence, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split; every class keeps at least one item on each side."""
    if not 0.0 < ratio < 1.0:
        raise InvalidRatio(f"train ratio must lie strictly between 0 and 1, got {ratio}")
    labels = list(labels)
    if not labels:
        raise InvalidDataset("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted(set(labels)):
        members = [i for i, lab in enumerate(labels) if lab == label]
        if len(members) < 2:
            raise StratifyError(f"class {label!r} has {len(members)} example(s); need at least 2")
        members = list(rng.permutation(members))
        n_test = min(len(members) - 1, max(1, int(round(len(members) * (1.0 - ratio)))))
        test += members[:n_test]
        train += members[n_test:]
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def split_dataset(manifest, ratio: float = 0.8, seed: int = 0):
    """Split a manifest's entries into (train, test) lists, stratified by label."""
    train_idx, test_idx = stratified_split([e.label for e in manifest.entries], ratio, seed)
    return [manifest.entries[i] for i in train_idx], [manifest.entries[i] for i in test_idx]


# ---------------------------------------------------------------------------
# Generic loop
# ---------------------------------------------------------------------------


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images))[:, None]


def _combine(ce: torch.Tensor, l1: torch.Tensor, weights: tuple[float, float]) -> torch.Tensor:
    # float64 keeps the logged total equal to its logged components
    w_ce, w_l1 = weights
    return w_ce * ce.double() + w_l1 * l1.double()


@torch.no_grad()
def evaluate_losses(model, data: ImageSet, weights, teacher=None, batch_size: int = 16) -> dict[str, float]:
    """Mean CE / L1 / total and weighted accuracy of ``model`` on ``data``."""
    model.eval()
    sums = {"ce": 0.0, "l1": 0.0, "total": 0.0}
    correct = 0
    for start in range(0, len(data), batch_size):
        x = _to_tensor(data.images[start : start + batch_size])
        y = torch.from_numpy(data.labels[start : start + batch_size])
        logits, feats, _ = model(x)
        ce = cross_entropy(logits, y)
        l1 = l1_loss(feats, teacher.features(x)) if teacher is not None else torch.zeros(())
        total = _combine(ce, l1, weights)
        n = len(y)
        sums["ce"] += ce.item() * n
        sums["l1"] += l1.item() * n
        sums["total"] += total.item() * n
        correct += int((logits.argmax(dim=1) == y).sum())
    out = {k: v / len(data) for k, v in sums.items()}
    out["wa"] = correct / len(data)
    return out


def fit(
    model: VisionTransformer,
    cfg: StageConfig,
    train: ImageSet,
    test: ImageSet | None = None,
    seed: int = 0,
    teacher: VisionTransformer | None = None,
    run_dir=None,
    name: str | None = None,
    epoch_callback=None,
) -> TrainRun:
    """Train ``model`` in place for ``cfg.epochs`` epochs with the stage's loss.

    The returned run keeps the best epoch's weights (highest test WA, or
    lowest test L1 for stage B) and ``model`` is left holding them.
    ``epoch_callback(run)`` may return True to end training early; it exists
    for test harnesses and is never set by the pipeline.
    """
    if len(train) == 0:
        raise InvalidDataset("training set is empty")
    weights = cfg.loss_weights
    if weights[1] > 0 and teacher is None:
        raise InvalidConfig(f"stage {cfg.stage} needs a frozen teacher")
    run = TrainRun(cfg, seed)
    if teacher is not None:
        teacher.eval()
        teacher.requires_grad_(False)
        run.teacher_digest = parameter_digest(teacher)

    name = name or cfg.stage
    run_dir = Path(run_dir) if run_dir is not None else None
    log_path = run_dir / f"{name}.tsv" if run_dir is not None else None
    if log_path is not None:
        log_path.write_text("\t".join(LOG_FIELDS) + "\n", encoding="utf-8")

    opt = Adam(model.parameters())
    rng = np.random.default_rng(seed)
    eval_set = test if test is not None and len(test) else train
    best_key = None
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        model.train()
        sums = np.zeros(3)
        correct = 0
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, rng)):
            x = _to_tensor(train.images[idx])
            y = torch.from_numpy(train.labels[idx])
            logits, feats, _ = model(x)
            ce = cross_entropy(logits, y)
            if teacher is not None:
                with torch.no_grad():
                    target = teacher.features(x)
                l1 = l1_loss(feats, target)
            else:
                l1 = torch.zeros((), dtype=feats.dtype)
            total = _combine(ce, l1, weights)
            opt.zero_grad()
            total.backward()
            opt.step(lr)
            rec = BatchRecord(epoch, b, ce.item(), l1.item(), total.item())
            run.batch_log.append(rec)
            sums += np.array([rec.ce, rec.l1, rec.total]) * len(idx)
            correct += int((logits.argmax(dim=1) == y).sum())
        train_means = sums / len(train)
        records = [EpochRecord(epoch, "train", lr, *map(float, train_means), correct / len(train))]
        ev = evaluate_losses(model, eval_set, weights, teacher)
        records.append(EpochRecord(epoch, "test", lr, ev["ce"], ev["l1"], ev["total"], ev["wa"]))
        run.metrics_log += records
        if log_path is not None:
            with log_path.open("a", encoding="utf-8") as fh:
                fh.writelines(r.to_line() + "\n" for r in records)
        log.info("%s epoch %d lr %.3g train %.4f test wa %.4f", name, epoch, lr, train_means[2], ev["wa"])

        key = -ev["l1"] if cfg.stage == "B_match" else ev["wa"]
        if best_key is None or key > best_key:
            best_key = key
            run.best_epoch = epoch
            run.best_state = copy.deepcopy(model.state_dict())
        if epoch_callback is not None and epoch_callback(run):
            break

    if teacher is not None and parameter_digest(teacher) != run.teacher_digest:
        raise RuntimeError("teacher parameters changed during a frozen-teacher stage")
    if run_dir is not None:
        last = run_dir / f"{name}_last.vsck"
        save_model(last, model, {"stage": cfg.stage, "seed": str(seed)})
        run.checkpoints["last"] = last
    model.load_state_dict(run.best_state)
    if run_dir is not None:
        best = run_dir / f"{name}.vsck"
        save_model(best, model, {"stage": cfg.stage, "seed": str(seed), "epoch": str(run.best_epoch)})
        run.checkpoints["best"] = best
    return run


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _resolve(model_or_path) -> VisionTransformer:
    if isinstance(model_or_path, VisionTransformer):
        return model_or_path
    return load_model(model_or_path)


def train_stage_a(
    teacher_spec: ModelSpec, train: ImageSet, test: ImageSet | None, cfg: StageConfig | None = None,
    seed: int = 0, run_dir=None, **kwargs,
) -> tuple[VisionTransformer, TrainRun]:
    """Train the teacher with cross entropy only."""
    cfg = cfg or StageConfig("A_teacher")
    teacher = build_model(teacher_spec, seed)
    run = fit(teacher, cfg, train, test, seed, run_dir=run_dir, name=kwargs.pop("name", "teacher"), **kwargs)
    return teacher, run


def train_stage_b(
    teacher, student_spec: ModelSpec, train: ImageSet, test: ImageSet | None, cfg: StageConfig | None = None,
    seed: int = 0, run_dir=None, **kwargs,
) -> tuple[VisionTransformer, TrainRun]:
    """Fit a fresh student's feature map to the frozen teacher's with L1 only."""
    cfg = cfg or StageConfig("B_match")
    teacher = _resolve(teacher)
    check_matchable(teacher.spec, student_spec)
    student = build_model(student_spec, seed)
    run = fit(student, cfg, train, test, seed, teacher=teacher, run_dir=run_dir,
              name=kwargs.pop("name", "student_b"), **kwargs)
    return student, run


def train_stage_c(
    student, teacher, train: ImageSet, test: ImageSet | None, cfg: StageConfig | None = None,
    seed: int = 0, run_dir=None, **kwargs,
) -> tuple[VisionTransformer, TrainRun]:
    """Fine-tune the stage-B student on ``CE + alpha * L1`` with a fresh classifier head."""
    cfg = cfg or StageConfig("C_student")
    student = _resolve(student)
    teacher = _resolve(teacher)
    check_matchable(teacher.spec, student.spec)
    student.reset_classifier(seed)
    run = fit(student, cfg, train, test, seed, teacher=teacher, run_dir=run_dir,
              name=kwargs.pop("name", "student"), **kwargs)
    return student, run


def directional_report(teacher_wa: Sequence[float], student_wa: Sequence[float], margin: float = 0.02) -> tuple[bool, str]:
    """Does the mean student WA reach the mean teacher WA minus ``margin``?"""
    t, s = float(np.mean(teacher_wa)), float(np.mean(student_wa))
    ok = s >= t - margin
    text = (
        f"teacher WA per seed: {', '.join(f'{w:.4f}' for w in teacher_wa)} (mean {t:.4f})\n"
        f"student WA per seed: {', '.join(f'{w:.4f}' for w in student_wa)} (mean {s:.4f})\n"
        f"student >= teacher - {margin:.2f}: {'yes' if ok else 'NO'}\n"
    )
    return ok, text
