"""Training loop, finite-difference gradient check and evaluation."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import tensor as tn
from .data import subsample, upsample_predictions
from .errors import ConfigError, TrainingDivergedError
from .losses import LossConfig, combined_loss, loss_terms, weighted_total
from .metrics import evaluate_corpus
from .model import model_forward, predict

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 1
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip: Optional[float] = None  # global L2 norm
    lr_decay: float = 1.0  # multiplicative, applied after every epoch
    supervise: str = "all"  # "all" stages or the "encoder" stage only

    def problems(self):
        out = []
        if not isinstance(self.epochs, int) or self.epochs < 1:
            out.append(f"train.epochs={self.epochs!r} must be an integer >= 1")
        if self.batch_size != 1:
            out.append(f"train.batch_size={self.batch_size!r}: only 1 video per step is supported")
        if not self.lr >= 0:
            out.append(f"train.lr={self.lr!r} must be >= 0")
        if not 0 <= self.beta1 < 1:
            out.append(f"train.beta1={self.beta1!r} must be in [0, 1)")
        if not 0 <= self.beta2 < 1:
            out.append(f"train.beta2={self.beta2!r} must be in [0, 1)")
        if not self.eps > 0:
            out.append(f"train.eps={self.eps!r} must be > 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            out.append(f"train.grad_clip={self.grad_clip!r} must be > 0 or unset")
        if not self.lr_decay > 0:
            out.append(f"train.lr_decay={self.lr_decay!r} must be > 0")
        if self.supervise not in ("all", "encoder"):
            out.append(f"train.supervise={self.supervise!r} must be 'all' or 'encoder'")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


@dataclass
class TrainResult:
    model: object
    log: List[dict] = field(default_factory=list)


def train(model, videos, cfg=None, loss_cfg=None, log_path=None):
    """Fit ``model`` on ``videos`` (one video per step, Adam).

    Returns the same model object, updated in place, and the per-epoch log.
    With ``log_path`` every epoch record is also appended as a JSON line.
    """
    cfg = (cfg or TrainConfig()).validate()
    loss_cfg = (loss_cfg or LossConfig()).validate()
    videos = list(videos)
    if not videos:
        raise ConfigError("training set is empty")
    for v in videos:
        if v.features.shape[1] != model.config.input_dim:
            raise ConfigError(f"video {v.id} has {v.features.shape[1]} feature channels, "
                              f"model expects {model.config.input_dim}")
        if v.labels.max() >= model.config.num_classes:
            raise ConfigError(f"video {v.id} has label {v.labels.max()} >= num_classes")
    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            sums = {"loss": 0.0, "cls": 0.0, "mse": 0.0, "circle": 0.0}
            correct = frames = 0
            for i in rng.permutation(len(videos)):
                v = videos[i]
                stages = model_forward(v.features, model)
                terms = loss_terms(stages, v.labels, loss_cfg, cfg.supervise)
                total = weighted_total(terms, loss_cfg)
                values = {k: t.item() for k, t in terms.items()}
                if not math.isfinite(total.item()):
                    raise TrainingDivergedError(epoch, v.id, {"total": total.item(), **values})
                model.zero_grad()
                total.backward()
                if cfg.grad_clip is not None:
                    clip_grad_norm(params, cfg.grad_clip)
                opt.step()
                sums["loss"] += total.item()
                for k, val in values.items():
                    sums[k] += val
                correct += int(np.count_nonzero(stages.final_logits.data.argmax(1) == v.labels))
                frames += v.num_frames
            n = len(videos)
            rec = {"epoch": epoch, "mean_loss": sums["loss"] / n, "cls": sums["cls"] / n,
                   "mse": sums["mse"] / n, "circle": sums["circle"] / n,
                   "train_acc": 100.0 * correct / frames}
            result.log.append(rec)
            log.info("epoch %d loss %.4f acc %.2f", epoch, rec["mean_loss"], rec["train_acc"])
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            opt.lr *= cfg.lr_decay
    finally:
        if fh:
            fh.close()
        model.zero_grad()
    return result


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    entries: List[tuple]  # (name, flat index, analytic, numeric, rel error)

    @property
    def passed(self):
        return bool(self.entries) and self.max_rel_error < self.tolerance

    @property
    def num_checked(self):
        return len(self.entries)

    def worst(self, k=5):
        return sorted(self.entries, key=lambda e: -e[4])[:k]

    def to_text(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradcheck {status}: {self.num_checked} parameters, "
                 f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.1e})"]
        for name, idx, a, num, rel in self.worst():
            lines.append(f"  {name}[{idx}] analytic={a:.6e} numeric={num:.6e} rel={rel:.2e}")
        return "\n".join(lines)


def grad_check(model, sample, loss_cfg=None, num_params=200, h=1e-5, tolerance=1e-4,
               seed=0, floor=1e-8, supervise="all", objective=None):
    """Compare analytic gradients of the combined loss with central differences.

    Stop-gradients are switched off so the analytic result is the true
    gradient of the scalar being differenced. Relative error is
    |a - n| / max(|a|, |n|, floor). ``objective(model, sample)`` replaces
    the combined loss with any scalar-valued function of the model.
    """
    loss_cfg = replace(loss_cfg or LossConfig(), stop_gradient=False)
    named = list(model.named_parameters().items())
    if objective is None:
        def objective(m, s):
            return combined_loss(model_forward(s.features, m), s.labels, loss_cfg, supervise)

    def loss_value():
        with tn.no_grad():
            return objective(model, sample).item()

    model.zero_grad()
    objective(model, sample).backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named}
    model.zero_grad()

    sizes = np.array([p.size for _, p in named])
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(num_params, total), replace=False))
    entries = []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p = named[k]
        idx = np.unravel_index(int(flat - offsets[k]), p.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        fp = loss_value()
        p.data[idx] = orig - h
        fm = loss_value()
        p.data[idx] = orig
        num = (fp - fm) / (2 * h)
        a = float(analytic[name][idx])
        rel = abs(a - num) / max(abs(a), abs(num), floor)
        entries.append((name, tuple(int(i) for i in idx), a, num, rel))
    worst = max((e[4] for e in entries), default=float("inf"))
    return GradCheckReport(worst, tolerance, entries)


def predict_video(model, sample, frame_step=1):
    """Final-stage argmax at the native frame rate."""
    reduced = subsample(sample, frame_step)
    pred = predict(model, reduced.features)
    return upsample_predictions(pred, frame_step, sample.num_frames)


def evaluate(model, videos, frame_step=1, ignore=(), pooled_f1=True):
    pairs = [(predict_video(model, v, frame_step), v.labels) for v in videos]
    return evaluate_corpus(pairs, ignore=ignore, pooled_f1=pooled_f1)
