"""The epoch loop: batching, augmentation, optimization, metrics, checkpoints."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .config import RunConfig, to_text
from .data import AugmentConfig, SegSample, augment, save_checkpoint
from .errors import NumericsError, UsageError
from .losses import binarize, dice_iou_metrics, hybrid_loss
from .model import SwinTextUNet
from .optim import AdamW, lr_at
from .text import normalize_prompt

CSV_HEADER = "epoch,split,loss,dice,iou,lr"


@dataclass
class EpochRow:
    epoch: int
    split: str
    loss: float
    dice: float
    iou: float
    lr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.split},{self.loss!r},{self.dice!r},{self.iou!r},{self.lr!r}"


@dataclass
class TrainResult:
    model: SwinTextUNet
    rows: list[EpochRow] = field(default_factory=list)
    csv_path: Path | None = None
    last_path: Path | None = None
    best_path: Path | None = None
    variant: str = ""

    def final(self, split: str) -> EpochRow:
        matching = [r for r in self.rows if r.split == split]
        if not matching:
            raise UsageError(f"no rows for split {split!r}")
        return matching[-1]


def batch_images(samples: list[SegSample], dtype) -> Tensor:
    """Stack grayscale maps into a (B, 3, H, W) tensor by channel replication."""
    imgs = np.stack([s.image for s in samples]).astype(dtype)
    return Tensor(np.repeat(imgs[:, None, :, :], 3, axis=1))


def batch_masks(samples: list[SegSample], dtype) -> Tensor:
    masks = np.stack([s.mask for s in samples]).astype(dtype)
    return Tensor(masks[:, None, :, :])


def _resolve_embeddings(samples: list[SegSample], provider) -> dict[str, np.ndarray]:
    """Resolve every prompt up front so failures surface before epoch 0."""
    table: dict[str, np.ndarray] = {}
    for s in samples:
        key = normalize_prompt(s.prompt)
        if key not in table:
            table[key] = provider.get(s.prompt)
    return table


def _embed_batch(samples: list[SegSample], table: dict[str, np.ndarray], dtype) -> Tensor:
    arr = np.stack([table[normalize_prompt(s.prompt)] for s in samples]).astype(dtype)
    return Tensor(arr[:, None, :], requires_grad=False)


def evaluate(model: SwinTextUNet, samples: list[SegSample],
             table: dict[str, np.ndarray], run: RunConfig) -> tuple[float, float, float]:
    """Mean loss and per-image mean Dice/IoU over a split (no gradients)."""
    dtype = model.dtype
    total_loss = 0.0
    dices, ious = [], []
    with no_grad():
        for start in range(0, len(samples), run.batch_size):
            chunk = samples[start:start + run.batch_size]
            x = batch_images(chunk, dtype)
            y = batch_masks(chunk, dtype)
            text = _embed_batch(chunk, table, dtype) if model.cfg.use_text else None
            _, prob = model(x, text)
            loss = hybrid_loss(prob, y, run.loss)
            total_loss += float(loss.data) * len(chunk)
            pred = binarize(prob.data)
            for i, s in enumerate(chunk):
                d, j = dice_iou_metrics(pred[i, 0], s.mask > 0.5)
                dices.append(d)
                ious.append(j)
    n = max(1, len(samples))
    return total_loss / n, float(np.mean(dices)), float(np.mean(ious))


def train(train_samples: list[SegSample], val_samples: list[SegSample],
          run: RunConfig, provider, out_dir=None, seed: int = 0,
          dtype=np.float32, log=None) -> TrainResult:
    """Deterministic training per Algorithm: encode, guide, decode, optimize.

    Writes metrics.csv plus last/best checkpoints into `out_dir` when given.
    A non-finite loss aborts with the last good parameters saved.
    """
    run.validate()
    if not train_samples:
        raise UsageError("training set is empty")
    model = SwinTextUNet(run.model, dtype=dtype, seed=seed)
    variant = run.model.variant_name()
    if log:
        log(f"variant: {variant}")
        log(f"parameters: {model.num_parameters()}")

    table = _resolve_embeddings(train_samples + val_samples, provider) if run.model.use_text \
        else {}
    named = list(model.named_parameters())
    opt = AdamW(named, lr=run.schedule.base_lr, weight_decay=run.weight_decay)
    aug_cfg = AugmentConfig()

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    result = TrainResult(model=model, variant=variant)
    best_val_dice = -1.0

    def save(path: Path) -> None:
        save_checkpoint(path, model.state_dict(), to_text(run))

    for epoch in range(run.schedule.epochs):
        lr = lr_at(epoch, run.schedule)
        opt.lr = lr
        order = np.random.default_rng((seed, epoch)).permutation(len(train_samples))

        epoch_loss = 0.0
        dices, ious = [], []
        for start in range(0, len(order), run.batch_size):
            idx = order[start:start + run.batch_size]
            chunk = []
            for i in idx:
                s = train_samples[int(i)]
                if run.augment:
                    s = augment(s, np.random.default_rng((seed, epoch, int(i))), aug_cfg)
                chunk.append(s)
            x = batch_images(chunk, dtype)
            y = batch_masks(chunk, dtype)
            text = _embed_batch(chunk, table, dtype) if run.model.use_text else None

            model.zero_grad()
            _, prob = model(x, text)
            loss = hybrid_loss(prob, y, run.loss)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                if out_dir is not None:
                    save(out_dir / "last.stun")
                raise NumericsError(
                    f"non-finite loss {loss_val} at epoch {epoch}; last-good checkpoint saved"
                )
            backward(loss)
            opt.step()

            epoch_loss += loss_val * len(chunk)
            pred = binarize(prob.data)
            for i, s in enumerate(chunk):
                d, j = dice_iou_metrics(pred[i, 0], s.mask > 0.5)
                dices.append(d)
                ious.append(j)

        result.rows.append(EpochRow(epoch, "train", epoch_loss / len(train_samples),
                                    float(np.mean(dices)), float(np.mean(ious)), lr))
        if val_samples:
            vloss, vdice, viou = evaluate(model, val_samples, table, run)
            result.rows.append(EpochRow(epoch, "val", vloss, vdice, viou, lr))
            if vdice > best_val_dice and out_dir is not None:
                best_val_dice = vdice
                save(out_dir / "best.stun")
                result.best_path = out_dir / "best.stun"
        if log:
            last = result.rows[-1]
            log(f"epoch {epoch}: split={last.split} loss={last.loss:.4f} "
                f"dice={last.dice:.4f} iou={last.iou:.4f} lr={lr:.2e}")

    if out_dir is not None:
        save(out_dir / "last.stun")
        result.last_path = out_dir / "last.stun"
        csv_path = out_dir / "metrics.csv"
        csv_path.write_text("\n".join([CSV_HEADER] + [r.csv() for r in result.rows]) + "\n")
        result.csv_path = csv_path
    return result
