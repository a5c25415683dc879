"""Training objective: cross-entropy + smoothing + circle loss, summed over stages."""
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DataError, ShapeError


class DegenerateVideoWarning(UserWarning):
    """A video too short for the temporal smoothing term."""


@dataclass
class LossConfig:
    lam: float = 0.15  # weight of the smoothing term
    beta: float = 0.001  # weight of the circle term
    tau: float = 4.0
    gamma: float = 64.0
    margin: float = 0.25
    class_weights: Optional[Sequence[float]] = None
    # stop gradients through the previous frame (smoothing) and the self-paced
    # circle weights; switch off to make the loss a plain differentiable function
    stop_gradient: bool = True

    def problems(self):
        out = []
        if not self.lam >= 0:
            out.append(f"loss.lam={self.lam!r} must be >= 0")
        if not self.beta >= 0:
            out.append(f"loss.beta={self.beta!r} must be >= 0")
        if not self.tau > 0:
            out.append(f"loss.tau={self.tau!r} must be > 0")
        if not self.gamma > 0:
            out.append(f"loss.gamma={self.gamma!r} must be > 0")
        if not 0 <= self.margin < 1:
            out.append(f"loss.margin={self.margin!r} must be in [0, 1)")
        if self.class_weights is not None and any(w < 0 for w in self.class_weights):
            out.append("loss.class_weights must be non-negative")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        d = asdict(self)
        if d["class_weights"] is not None:
            d["class_weights"] = list(d["class_weights"])
        return d


# Loss-weight grid of the loss ablation: (lam, beta).
LOSS_ABLATION_GRID = ((0.15, 0.0), (0.75, 0.0), (0.75, 0.001), (0.15, 0.001))


def _labels(labels, T, c):
    y = np.asarray(labels)
    if y.shape != (T,):
        raise ShapeError(f"{len(y)} labels for {T} frames")
    bad = np.flatnonzero((y < 0) | (y >= c))
    if bad.size:
        raise DataError(f"label {int(y[bad[0]])} at frame {int(bad[0])} outside [0, {c})")
    return y.astype(np.intp)


def cls_loss(logits, labels, class_weights=None):
    """Mean per-frame negative log-likelihood of the true class.

    With ``class_weights`` the mean is weighted: sum(w_y * nll) / sum(w_y).
    """
    T, c = logits.shape
    y = _labels(labels, T, c)
    nll = tn.scale(tn.take(tn.log_softmax_rows(logits), (np.arange(T), y)), -1.0)
    if class_weights is None:
        return tn.mean(nll)
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (c,):
        raise ShapeError(f"{w.size} class weights for {c} classes")
    wy = w[y]
    return tn.scale(tn.tsum(tn.mul(nll, wy)), 1.0 / wy.sum())


def smooth_loss(log_probs, tau=4.0, stop_gradient=True):
    """Mean over (T-1) x c of min(|log p_t - log p_{t-1}|, tau)^2."""
    T = log_probs.shape[0]
    if T < 2:
        warnings.warn("smoothing loss needs at least two frames; returning 0",
                      DegenerateVideoWarning, stacklevel=2)
        return tn.Tensor(0.0)
    prev = log_probs[:-1]
    if stop_gradient:
        prev = tn.stop_gradient(prev)
    delta = tn.clamp_max(tn.absolute(tn.sub(log_probs[1:], prev)), tau)
    return tn.mean(tn.square(delta))


def circle_loss_from_scores(s_p, s_n, gamma=64.0, margin=0.25, stop_gradient=True):
    """Circle loss for rows of positive (T x K) and negative (T x L) similarities.

    Per row: log(1 + sum_j exp(g a_n^j (s_n^j - m)) * sum_i exp(g a_p^i (1 - m - s_p^i)))
    with a_p = [1 + m - s_p]_+ and a_n = [s_n + m]_+. Returns the row mean.
    """
    a_p = tn.relu(tn.scale(tn.sub(s_p, 1.0 + margin), -1.0))
    a_n = tn.relu(tn.add(s_n, margin))
    if stop_gradient:
        a_p, a_n = tn.stop_gradient(a_p), tn.stop_gradient(a_n)
    logit_p = tn.scale(tn.mul(a_p, tn.sub(1.0 - margin, s_p)), gamma)
    logit_n = tn.scale(tn.mul(a_n, tn.sub(s_n, margin)), gamma)
    z = tn.add(tn.logsumexp(logit_n, axis=1), tn.logsumexp(logit_p, axis=1))
    return tn.mean(tn.softplus(z))


def class_similarities(embeddings, class_weights, labels):
    """Cosine similarities of each frame to its own class (T x 1) and the others (T x c-1)."""
    T = embeddings.shape[0]
    c = class_weights.shape[1]
    if class_weights.shape[0] != embeddings.shape[1]:
        raise ShapeError(f"embeddings {embeddings.shape} vs class weights {class_weights.shape}")
    y = _labels(labels, T, c)
    if c < 2:
        raise ShapeError("circle loss needs at least two classes")
    sim = tn.cosine_rows(embeddings, class_weights)
    rows = np.arange(T)
    others = np.array([[k for k in range(c) if k != yt] for yt in y], dtype=np.intp)
    s_p = tn.take(sim, (rows[:, None], y[:, None]))
    s_n = tn.take(sim, (rows[:, None], others))
    return s_p, s_n


def circle_loss(embeddings, class_weights, labels, gamma=64.0, margin=0.25, stop_gradient=True):
    """Classification form of circle loss on frame embeddings vs. classifier weight columns."""
    s_p, s_n = class_similarities(embeddings, class_weights, labels)
    return circle_loss_from_scores(s_p, s_n, gamma, margin, stop_gradient)


def loss_terms(stages, labels, cfg, supervise="all"):
    """Summed (cls, smooth, circle) tensors over the supervised stages."""
    idx = range(len(stages)) if supervise == "all" else range(1)
    cls_t = smooth_t = circ_t = None
    for s in idx:
        z = stages.logits[s]
        a = cls_loss(z, labels, cfg.class_weights)
        b = smooth_loss(tn.log_softmax_rows(z), cfg.tau, cfg.stop_gradient)
        c = circle_loss(stages.embeddings[s], stages.classifier_weights[s], labels,
                        cfg.gamma, cfg.margin, cfg.stop_gradient)
        cls_t = a if cls_t is None else tn.add(cls_t, a)
        smooth_t = b if smooth_t is None else tn.add(smooth_t, b)
        circ_t = c if circ_t is None else tn.add(circ_t, c)
    return {"cls": cls_t, "mse": smooth_t, "circle": circ_t}


def weighted_total(terms, cfg):
    total = terms["cls"]
    if cfg.lam:
        total = tn.add(total, tn.scale(terms["mse"], cfg.lam))
    if cfg.beta:
        total = tn.add(total, tn.scale(terms["circle"], cfg.beta))
    return total


def combined_loss(stages, labels, cfg=None, supervise="all"):
    """sum over stages of cls + lam * smooth + beta * circle."""
    cfg = cfg or LossConfig()
    if supervise not in ("all", "encoder"):
        raise ConfigError(f"supervise={supervise!r} must be 'all' or 'encoder'")
    return weighted_total(loss_terms(stages, labels, cfg, supervise), cfg)
