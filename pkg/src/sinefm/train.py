"""Desk-scale training, evaluation and ablation harness."""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import functional as F
from .cost import model_cost
from .errors import NumericError, ShapeError, ValidationError
from .network import build, convert_to_sinefm
from .rng import derive_seed
from .tensor import Tensor
from .transforms import HyperBounds, TransformFamily

log = logging.getLogger(__name__)

# Sub-seed stream indices fanned out from one master seed.
STREAM_INIT, STREAM_TRANSFORMS, STREAM_DATA, STREAM_SHUFFLE = 0, 1, 2, 3


# -- data ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synth-class"          # synth-class | synth-seg | image-folder
    train_count: int = 512
    test_count: int = 256
    noise: float = 0.1
    seed: int = 0
    size: Optional[int] = None         # 16 for synth-class, 32 for synth-seg
    path: Optional[str] = None         # image-folder root


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: int
    task: str                          # "class" or "seg"


def _class_images(rng, labels, size, noise):
    n = len(labels)
    imgs = np.empty((n, 3, size, size))
    rows, cols = np.mgrid[0:size, 0:size]
    for i, lab in enumerate(labels):
        fg = rng.uniform(0, 1, 3)
        bg = (fg + rng.uniform(0.35, 0.65, 3)) % 1.0
        period = int(rng.integers(2, 5))
        phase = int(rng.integers(0, 2 * period))
        if lab == 0:
            mask = ((rows + phase) // period) % 2
        elif lab == 1:
            mask = ((cols + phase) // period) % 2
        elif lab == 2:
            mask = (((rows + phase) // period) + ((cols + phase) // period)) % 2
        else:
            mask = np.ones((size, size))
        mask = mask.astype(bool)
        imgs[i] = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    imgs += rng.normal(0, noise, imgs.shape)
    return imgs - 0.5


def synth_class(count, seed, noise=0.1, size=16):
    """Four texture classes: horizontal stripes, vertical stripes, checkerboard, solid."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 4)
    return _class_images(rng, labels, size, noise), labels.astype(np.int64)


def synth_seg(count, seed, noise=0.1, size=32):
    """Random axis-aligned rectangles (class 1) on a textured background (class 0)."""
    rng = np.random.default_rng(seed)
    imgs = np.empty((count, 3, size, size))
    masks = np.zeros((count, size, size), dtype=np.int64)
    for i in range(count):
        bg = rng.uniform(0, 1, 3)
        fg = (bg + rng.uniform(0.35, 0.65, 3)) % 1.0
        for _ in range(int(rng.integers(1, 4))):
            h, w = rng.integers(size // 6, size // 2, 2)
            r, c = rng.integers(0, size - h), rng.integers(0, size - w)
            masks[i, r:r + h, c:c + w] = 1
        imgs[i] = np.where(masks[i][None] == 1, fg[:, None, None], bg[:, None, None])
    imgs += rng.normal(0, noise, imgs.shape)
    return imgs - 0.5, masks


def _image_folder(root):
    from PIL import Image

    root = Path(root)
    img_dir = root / "images" if (root / "images").is_dir() else root
    mask_dir = root / "masks"
    if not mask_dir.is_dir():
        raise ValidationError(f"{root}: expected a 'masks' directory next to the images")
    xs, ys = [], []
    for img_path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".pgm")):
        candidates = [mask_dir / (img_path.stem + ext) for ext in (".png", ".pgm")]
        mask_path = next((c for c in candidates if c.exists()), None)
        if mask_path is None:
            raise ValidationError(f"no mask for image {img_path.name}")
        img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float64) / 255.0
        mask = np.asarray(Image.open(mask_path), dtype=np.int64)
        if mask.shape != img.shape[:2]:
            raise ShapeError(f"{mask_path.name}: mask {mask.shape} vs image {img.shape[:2]}")
        xs.append(img.transpose(2, 0, 1) - 0.5)
        ys.append(mask)
    if not xs:
        raise ValidationError(f"{img_dir}: no PNG/PGM images found")
    return np.stack(xs), np.stack(ys)


def load_dataset(spec, dtype=np.float32):
    """Materialize a :class:`DatasetSpec`; train and test come from disjoint draws."""
    total = spec.train_count + spec.test_count
    if spec.kind == "synth-class":
        x, y = synth_class(total, spec.seed, spec.noise, spec.size or 16)
        classes, task = 4, "class"
    elif spec.kind == "synth-seg":
        x, y = synth_seg(total, spec.seed, spec.noise, spec.size or 32)
        classes, task = 2, "seg"
    elif spec.kind == "image-folder":
        if not spec.path:
            raise ValidationError("image-folder dataset needs a path")
        x, y = _image_folder(spec.path)
        classes, task = int(y.max()) + 1, "seg"
        rng = np.random.default_rng(spec.seed)
        order = rng.permutation(len(x))
        x, y = x[order], y[order]
        n_test = min(spec.test_count, len(x) // 2) if len(x) > 1 else 0
        cut = len(x) - n_test
        return Dataset(x[:cut].astype(dtype), y[:cut], x[cut:].astype(dtype), y[cut:], classes, task)
    else:
        raise ValidationError(f"unknown dataset kind {spec.kind!r}")
    cut = spec.train_count
    return Dataset(x[:cut].astype(dtype), y[:cut], x[cut:].astype(dtype), y[cut:], classes, task)


# -- metrics --------------------------------------------------------------------------


def confusion_matrix(truth, pred, classes):
    """Rows are ground truth, columns are predictions."""
    truth = np.asarray(truth).reshape(-1).astype(np.int64)
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    return np.bincount(truth * classes + pred, minlength=classes * classes).reshape(classes, classes)


def metrics_from_confusion(cm):
    """mIoU, overall accuracy and mean F1 from one confusion matrix.

    A class that appears in neither truth nor prediction is left out of the
    means, since its IoU and F1 are 0/0.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(present, tp / (tp + fp + fn), np.nan)
        f1 = np.where(present, 2 * tp / (2 * tp + fp + fn), np.nan)
    total = cm.sum()
    return {
        "miou": float(np.nanmean(iou)) if present.any() else float("nan"),
        "oa": float(tp.sum() / total) if total else float("nan"),
        "mean_f1": float(np.nanmean(f1)) if present.any() else float("nan"),
        "iou": iou.tolist(),
        "f1": f1.tolist(),
    }


@dataclass
class Evaluation:
    confusion: np.ndarray
    metrics: dict

    @property
    def primary(self):
        return self.metrics["accuracy"] if "accuracy" in self.metrics else self.metrics["miou"]


def _batched_predict(model, x, batch, threads=1):
    def run(i):
        return model.forward(Tensor(x[i:i + batch].astype(model.dtype, copy=False))).data

    starts = range(0, len(x), batch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.concatenate(list(pool.map(run, starts)))
    return np.concatenate([run(i) for i in starts])


def evaluate(model, x, y, classes=None, batch=64, threads=1):
    """Accuracy for classifiers; mIoU / OA / mean F1 for segmenters.

    The model is only read, so ``threads > 1`` evaluates batches in parallel.
    """
    scores = _batched_predict(model, x, batch, threads)
    classes = classes or scores.shape[1]
    pred = scores.argmax(axis=1)
    cm = confusion_matrix(y, pred, classes)
    m = metrics_from_confusion(cm)
    if scores.ndim == 2:
        return Evaluation(cm, {"accuracy": m["oa"], **m})
    return Evaluation(cm, m)


def evaluate_dataset(model, data, split="test", batch=64, threads=1):
    x, y = (data.x_test, data.y_test) if split == "test" else (data.x_train, data.y_train)
    return evaluate(model, x, y, data.classes, batch, threads)


# -- optimization ------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    algorithm: str = "adamw"           # adamw | sgd-momentum
    lr: float = 6e-4
    epochs: int = 20
    batch: int = 32
    weight_decay: float = 0.01
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    flips: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.algorithm not in ("adamw", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")


def cosine_lr(base, step, total):
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


class SGDMomentum:
    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - p.data.dtype.type(lr) * v


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, betas=(0.9, 0.999), weight_decay=0.01, eps=1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            dt = p.data.dtype.type
            update = (m / c1) / (np.sqrt(v / c2) + dt(self.eps))
            p.data = p.data * dt(1 - lr * self.weight_decay) - dt(lr) * update


def make_optimizer(params, cfg):
    if cfg.algorithm == "adamw":
        return AdamW(params, cfg.betas, cfg.weight_decay)
    return SGDMomentum(params, cfg.momentum)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metric: float
    lr: float


@dataclass
class History:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "metric", "lr"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.loss), repr(r.metric), repr(r.lr)])
        return buf.getvalue()


def _flip(xb, yb, rng):
    if rng.random() < 0.5:
        xb = xb[..., ::-1]
        yb = yb[..., ::-1] if yb.ndim == 3 else yb
    if rng.random() < 0.5:
        xb = xb[..., ::-1, :]
        yb = yb[..., ::-1, :] if yb.ndim == 3 else yb
    return np.ascontiguousarray(xb), np.ascontiguousarray(yb)


def train(model, data, optim, seed=0, log_every=0):
    """Minimize softmax cross-entropy on ``data.x_train``.

    Learning rate follows a cosine schedule from ``optim.lr`` to zero over all
    steps. Fixed transform hyperparameters are compared before and after every
    epoch and must not change.
    """
    history = History()
    if optim.epochs == 0:
        return history
    head = model.descriptor.head
    if head != data.task:
        raise ValidationError(f"model head {head!r} does not match {data.task!r} dataset")
    params = model.parameters()
    opt = make_optimizer(params, optim)
    rng = np.random.default_rng(derive_seed(seed, STREAM_SHUFFLE))
    n = len(data.x_train)
    steps_per_epoch = math.ceil(n / optim.batch)
    total = steps_per_epoch * optim.epochs
    fingerprint = model.transform_fingerprint()
    step = 0
    for epoch in range(optim.epochs):
        order = rng.permutation(n)
        loss_sum, cm = 0.0, np.zeros((data.classes, data.classes), dtype=np.int64)
        lr = optim.lr
        for b in range(steps_per_epoch):
            idx = order[b * optim.batch:(b + 1) * optim.batch]
            xb, yb = data.x_train[idx], data.y_train[idx]
            if optim.flips:
                xb, yb = _flip(xb, yb, rng)
            lr = cosine_lr(optim.lr, step, total)
            for p in params:
                p.zero_grad()
            logits = model.forward(Tensor(xb.astype(model.dtype, copy=False)))
            loss = F.cross_entropy(logits, yb)
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {f"{i}.{p.name}": float(np.linalg.norm(p.data))
                         for i, m in enumerate(model.modules) if m is not None for p in m.parameters()}
                raise NumericError(f"non-finite loss at epoch {epoch}, step {b}; "
                                   f"parameter norms: {norms}")
            loss.backward()
            opt.step(lr)
            step += 1
            loss_sum += value * len(idx)
            cm += confusion_matrix(yb, logits.data.argmax(axis=1), data.classes)
        if model.transform_fingerprint() != fingerprint:
            raise ValidationError(f"fixed transform hyperparameters changed during epoch {epoch}")
        m = metrics_from_confusion(cm)
        metric = m["oa"] if data.task == "class" else m["miou"]
        history.records.append(EpochRecord(epoch, loss_sum / n, metric, lr))
        if log_every and (epoch % log_every == 0 or epoch == optim.epochs - 1):
            log.info("epoch %d loss %.4f metric %.4f", epoch, loss_sum / n, metric)
    return history


# -- ablations -------------------------------------------------------------------------------


@dataclass
class AblationTable:
    rows: List[tuple]                  # (family label, trial, metric)

    def summary(self):
        out = {}
        for fam, _, metric in self.rows:
            out.setdefault(fam, []).append(metric)
        return {f: (float(np.mean(v)), float(np.std(v))) for f, v in out.items()}

    def ranking(self):
        return sorted(self.summary().items(), key=lambda kv: -kv[1][0])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "trial", "metric"])
        for fam, trial, metric in self.rows:
            w.writerow([fam, trial, repr(metric)])
        for fam, (mean, std) in self.summary().items():
            w.writerow([fam, "mean", repr(mean)])
            w.writerow([fam, "std", repr(std)])
        return buf.getvalue()


def _run_trial(descriptor, data, optim, seed):
    model = build(descriptor, seed=seed)
    train(model, data, optim, seed=seed)
    return evaluate_dataset(model, data).primary


def ablate_families(base_descriptor, families, data, optim, trials=1, seed=0, c_s=16, k=5):
    """Final test metric per transform family and trial; ordering is only reported."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for fam in families:
        fam = TransformFamily.parse(fam)
        for t in range(trials):
            trial_seed = derive_seed(seed, t)
            desc = convert_to_sinefm(base_descriptor, c_s, k, fam,
                                     derive_seed(trial_seed, STREAM_TRANSFORMS))
            metric = _run_trial(desc, data, optim, trial_seed)
            log.info("ablate %s trial %d: %.4f", fam.label, t, metric)
            rows.append((fam.label, t, metric))
    return AblationTable(rows)


SWEEP_AXES = ("omega_bounds", "psi_bounds", "fanout", "c_s")


@dataclass
class SweepCurve:
    axis: str
    rows: List[tuple]                  # (value label, metric, params, flops)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.axis, "metric", "params", "flops"])
        for value, metric, params, flops in self.rows:
            w.writerow([value, repr(metric), params, flops])
        return buf.getvalue()


def _value_label(v):
    if isinstance(v, (tuple, list)):
        return ":".join(repr(float(x)) for x in v)
    return str(v)


def sweep_hyperparams(axis, values, base_descriptor, data, optim, seed=0,
                      family=TransformFamily.SINUSOIDAL, c_s=16, k=5):
    """Metric (and cost) as one hyperparameter varies with every seed held fixed."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    tseed = derive_seed(seed, STREAM_TRANSFORMS)
    for v in values:
        desc = base_descriptor
        cs, fan = c_s, k
        if axis == "c_s":
            cs = int(v)
        elif axis == "fanout":
            fan = int(v)
        desc = convert_to_sinefm(desc, cs, fan, family, tseed)
        if axis == "omega_bounds":
            desc = desc.with_bounds(omega=HyperBounds(*map(float, v)))
        elif axis == "psi_bounds":
            desc = desc.with_bounds(psi=HyperBounds(*map(float, v)))
        metric = _run_trial(desc, data, optim, seed)
        cost = model_cost(desc)
        log.info("sweep %s=%s: %.4f", axis, _value_label(v), metric)
        rows.append((_value_label(v), metric, cost.total_params, cost.total_flops))
    return SweepCurve(axis, rows)
