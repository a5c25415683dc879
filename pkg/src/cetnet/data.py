"""Datasets: on-disk layout, label files, frame subsampling and a synthetic generator.

Directory layout (the convention of the common segmentation benchmarks)::

    <root>/mapping.txt              "<id> <name>" per line, ids dense from 0
    <root>/features/<video>.cetf    T x D features
    <root>/groundTruth/<video>.txt  one class name per frame
    <root>/splits/<split>.bundle    one video id per line
"""
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError, DataError, FormatError, ParameterError
from .formats import load_feature_file, write_feature_file


@dataclass
class VideoSample:
    id: str
    features: np.ndarray  # T x D
    labels: np.ndarray  # T ints

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"{self.id}: features must be T x D with T >= 1, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError(f"{self.id}: {self.labels.size} labels for {self.features.shape[0]} frames")

    @property
    def num_frames(self):
        return self.features.shape[0]


class LabelMap:
    """Bijection between class names and dense ids 0..c-1."""

    def __init__(self, names):
        names = list(names)
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate class names: {dup}")
        self.names = names
        self._ids = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, LabelMap) and self.names == other.names

    def id(self, name):
        return self._ids[name]

    def name(self, idx):
        return self.names[idx]

    @classmethod
    def read(cls, path):
        entries = {}
        for lineno, line in enumerate(_read_lines(path), 1):
            if not line.strip():
                continue
            parts = line.split(maxsplit=1)
            if len(parts) != 2 or not parts[0].isdigit():
                raise FormatError(f"expected '<id> <name>', got {line!r}", path, line=lineno)
            idx = int(parts[0])
            if idx in entries:
                raise FormatError(f"id {idx} listed twice", path, line=lineno)
            entries[idx] = parts[1].strip()
        if sorted(entries) != list(range(len(entries))):
            raise FormatError(f"ids must be dense from 0, got {sorted(entries)}", path)
        return cls(entries[i] for i in range(len(entries)))

    def write(self, path):
        Path(path).write_text("".join(f"{i} {n}\n" for i, n in enumerate(self.names)), encoding="utf-8")


def _read_lines(path):
    # newline=None folds CRLF and CR into \n
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        return fh.read().splitlines()


def load_labels(path, label_map):
    ids = []
    for lineno, line in enumerate(_read_lines(path), 1):
        name = line.strip()
        try:
            ids.append(label_map.id(name))
        except KeyError:
            raise FormatError(f"unknown class name {name!r}", path, line=lineno) from None
    if not ids:
        raise FormatError("label file is empty", path)
    return np.array(ids, dtype=np.int64)


def write_labels(path, labels, label_map):
    Path(path).write_text("".join(f"{label_map.name(int(i))}\n" for i in labels), encoding="utf-8")


def read_split(path):
    ids = [line.strip() for line in _read_lines(path) if line.strip()]
    if len(set(ids)) != len(ids):
        raise FormatError("split lists a video more than once", path)
    return ids


def write_split(path, ids):
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def csv_to_feature_file(csv_path, out_path):
    """Convert a CSV with header ``T,D`` followed by T rows of D numbers to CETF."""
    lines = [l for l in _read_lines(csv_path) if l.strip()]
    if not lines:
        raise FormatError("empty CSV", csv_path, line=1)
    try:
        T, D = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise FormatError(f"header must be 'T,D', got {lines[0]!r}", csv_path, line=1) from None
    if len(lines) - 1 != T:
        raise FormatError(f"header declares {T} rows, found {len(lines) - 1}", csv_path, line=len(lines))
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"non-numeric value in {line!r}", csv_path, line=lineno) from None
        if len(row) != D:
            raise FormatError(f"expected {D} values, got {len(row)}", csv_path, line=lineno)
        rows.append(row)
    write_feature_file(out_path, np.array(rows))


# ---------------------------------------------------------------- frame step

def default_frame_step(profile):
    return 2 if str(profile).lower() == "50salads" else 1


def subsample(sample, step):
    """Keep frames 0, step, 2*step, ... of features and labels."""
    if int(step) != step or step < 1:
        raise ParameterError(f"frame step must be a positive integer, got {step}")
    step = int(step)
    return VideoSample(sample.id, sample.features[::step], sample.labels[::step])


def upsample_predictions(pred, step, num_frames):
    """Repeat each prediction ``step`` times and cut to ``num_frames``."""
    if int(step) != step or step < 1:
        raise ParameterError(f"frame step must be a positive integer, got {step}")
    out = np.repeat(np.asarray(pred), int(step))[:num_frames]
    if out.size < num_frames:
        raise DataError(f"{len(pred)} predictions at step {step} cannot cover {num_frames} frames")
    return out


# ---------------------------------------------------------------- datasets on disk

@dataclass
class Dataset:
    label_map: LabelMap
    splits: Dict[str, List[VideoSample]] = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.label_map)

    @property
    def feature_dim(self):
        for videos in self.splits.values():
            if videos:
                return videos[0].features.shape[1]
        return None

    def __getitem__(self, split):
        return self.splits[split]


def save_dataset(root, dataset):
    root = Path(root)
    for sub in ("features", "groundTruth", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    dataset.label_map.write(root / "mapping.txt")
    for split, videos in dataset.splits.items():
        for v in videos:
            write_feature_file(root / "features" / f"{v.id}.cetf", v.features)
            write_labels(root / "groundTruth" / f"{v.id}.txt", v.labels, dataset.label_map)
        write_split(root / "splits" / f"{split}.bundle", [v.id for v in videos])


def load_video(root, video_id, label_map):
    root = Path(root)
    feats = load_feature_file(root / "features" / f"{video_id}.cetf")
    labels = load_labels(root / "groundTruth" / f"{video_id}.txt", label_map)
    if len(labels) != feats.shape[0]:
        raise DataError(f"{video_id}: {feats.shape[0]} feature rows but {len(labels)} labels")
    return VideoSample(video_id, feats, labels)


def load_dataset(root, splits=None):
    """Load ``splits`` (default: every bundle under ``splits/``)."""
    root = Path(root)
    label_map = LabelMap.read(root / "mapping.txt")
    if splits is None:
        splits = sorted(p.stem for p in (root / "splits").glob("*.bundle"))
    ds = Dataset(label_map)
    for split in splits:
        path = root / "splits" / f"{split}.bundle"
        if not path.exists():
            raise FormatError(f"no split named {split!r}", path)
        ds.splits[split] = [load_video(root, vid, label_map) for vid in read_split(path)]
    return ds


def dataset_files(root):
    """Every regular file under ``root`` in a stable order (for manifests)."""
    root = Path(root)
    return sorted(p for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def kfold_splits(video_ids, k):
    """Contiguous k-fold partition: every id appears in exactly one test fold."""
    ids = list(video_ids)
    if k < 2 or k > len(ids):
        raise ParameterError(f"k={k} must be in [2, {len(ids)}]")
    folds = np.array_split(np.arange(len(ids)), k)
    out = []
    for f in folds:
        test = [ids[i] for i in f]
        held = set(test)
        out.append(([v for v in ids if v not in held], test))
    return out


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthConfig:
    num_classes: int = 5
    feature_dim: int = 16
    min_segment: int = 20
    max_segment: int = 60
    video_length: int = 300
    sigma: float = 1.0
    mean_scale: float = 1.0
    num_train: int = 20
    num_test: int = 5
    transition_seed: Optional[int] = None  # defaults to the dataset seed

    def problems(self):
        out = []
        if self.num_classes < 2:
            out.append(f"synth.num_classes={self.num_classes} must be >= 2")
        if self.feature_dim < 1:
            out.append(f"synth.feature_dim={self.feature_dim} must be >= 1")
        if not 1 <= self.min_segment <= self.max_segment:
            out.append(f"synth.min_segment/max_segment=({self.min_segment}, {self.max_segment}) "
                       "must satisfy 1 <= min <= max")
        if self.video_length < 1:
            out.append(f"synth.video_length={self.video_length} must be >= 1")
        if not self.sigma >= 0:
            out.append(f"synth.sigma={self.sigma} must be >= 0")
        if not self.mean_scale > 0:
            out.append(f"synth.mean_scale={self.mean_scale} must be > 0")
        if self.num_train < 0 or self.num_test < 0 or self.num_train + self.num_test == 0:
            out.append("synth.num_train/num_test must be non-negative and not both zero")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        return asdict(self)


# Calibrated so the per-frame Bayes-optimal accuracy is ~90% (see bayes_frame_accuracy).
BENCHMARK_SYNTH = SynthConfig(num_classes=5, feature_dim=16, min_segment=20, max_segment=60,
                              video_length=300, sigma=0.71, mean_scale=0.5, num_train=20, num_test=5)


@dataclass
class SynthDataset(Dataset):
    class_means: Optional[np.ndarray] = None
    transition: Optional[np.ndarray] = None


def transition_matrix(num_classes, rng):
    """Random row-stochastic matrix with zero diagonal (segments change label)."""
    p = rng.dirichlet(np.ones(num_classes - 1), size=num_classes)
    out = np.zeros((num_classes, num_classes))
    for i in range(num_classes):
        out[i, np.arange(num_classes) != i] = p[i]
    return out


def stationary_distribution(transition):
    w, v = np.linalg.eig(transition.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return pi / pi.sum()


def synth_labels(cfg, transition, rng, length=None):
    """Markov chain of segment labels with uniform durations, cut to ``length`` frames."""
    length = cfg.video_length if length is None else length
    c = transition.shape[0]
    label = int(rng.choice(c, p=stationary_distribution(transition)))
    out = []
    while len(out) < length:
        dur = int(rng.integers(cfg.min_segment, cfg.max_segment + 1))
        out.extend([label] * dur)
        label = int(rng.choice(c, p=transition[label]))
    return np.array(out[:length], dtype=np.int64)


def synth_generate(cfg, seed=0):
    """Deterministic synthetic dataset with ``train`` and ``test`` splits."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    trng = rng if cfg.transition_seed is None else np.random.default_rng(cfg.transition_seed)
    transition = transition_matrix(cfg.num_classes, trng)
    means = rng.normal(0.0, cfg.mean_scale, size=(cfg.num_classes, cfg.feature_dim))
    means = means.astype(np.float32).astype(np.float64)
    label_map = LabelMap(f"action_{k}" for k in range(cfg.num_classes))
    ds = SynthDataset(label_map, {}, class_means=means, transition=transition)
    n = 0
    for split, count in (("train", cfg.num_train), ("test", cfg.num_test)):
        videos = []
        for _ in range(count):
            y = synth_labels(cfg, transition, rng)
            x = means[y] + cfg.sigma * rng.standard_normal((y.size, cfg.feature_dim))
            # f32-representable so a dataset reloaded from CETF is bit-identical to the in-memory one
            x = x.astype(np.float32).astype(np.float64)
            videos.append(VideoSample(f"video_{n:03d}", x, y))
            n += 1
        ds.splits[split] = videos
    return ds


def bayes_frame_accuracy(means, sigma, prior, num_samples=200_000, seed=0):
    """Monte Carlo accuracy of the per-frame MAP classifier for isotropic Gaussian classes."""
    rng = np.random.default_rng(seed)
    means = np.asarray(means)
    prior = np.asarray(prior)
    y = rng.choice(len(prior), size=num_samples, p=prior)
    x = means[y] + sigma * rng.standard_normal((num_samples, means.shape[1]))
    if sigma == 0:
        return 1.0
    d2 = ((x[:, None, :] - means[None]) ** 2).sum(-1)
    score = np.log(prior)[None] - d2 / (2 * sigma ** 2)
    return float(np.mean(score.argmax(1) == y))
