"""Encoder plus cross-enhancement decoder stack.

The encoder projects D-dimensional frame features to the model width, runs
``num_layers`` self-attention blocks with dilations 1, 2, 4, ... and keeps
every block output. Each decoder stage takes the previous stage's frame
probabilities, and at its layer ``l`` fuses them with encoder feature ``l``
(channel concat + 1x1 projection) to form queries and keys. The value input
of that layer is either encoder feature ``l`` ("cross") or the block's own
normalised features, as dictated by the cross mode.
"""
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as tn
from .blocks import BlockParams, attention_dims, init_block, self_attention_block, uniform_init
from .errors import ConfigError, ShapeError
from .tensor import Tensor

CROSS_MODES = ("all", "none", "ahead", "behind", "ahead_only", "behind_only")


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    model_dim: int = 64
    num_layers: int = 10
    num_decoders: int = 10
    heads: int = 1
    r: int = 1
    split_heads: bool = True
    cross_mode: str = "all"
    window: Optional[int] = None

    @classmethod
    def desk(cls, input_dim, num_classes, **overrides):
        """Small profile used for tests and synthetic experiments."""
        kw = dict(model_dim=16, num_layers=5, num_decoders=2)
        kw.update(overrides)
        return cls(input_dim=input_dim, num_classes=num_classes, **kw)

    def problems(self):
        out = []
        for name in ("input_dim", "num_classes", "model_dim"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                out.append(f"model.{name}={getattr(self, name)!r} must be a positive integer")
        if not isinstance(self.num_layers, int) or self.num_layers < 0:
            out.append(f"model.num_layers={self.num_layers!r} must be >= 0")
        if not isinstance(self.num_decoders, int) or self.num_decoders < 0:
            out.append(f"model.num_decoders={self.num_decoders!r} must be >= 0")
        if self.cross_mode not in CROSS_MODES:
            out.append(f"model.cross_mode={self.cross_mode!r} must be one of {', '.join(CROSS_MODES)}")
        elif (self.cross_mode == "ahead_only" and isinstance(self.num_layers, int)
              and self.num_layers == 1 and self.num_decoders > 0):
            out.append("model.cross_mode='ahead_only' needs num_layers >= 2")
        if self.window is not None and (not isinstance(self.window, int) or self.window < 0):
            out.append(f"model.window={self.window!r} must be a non-negative integer or unset")
        if isinstance(self.model_dim, int) and self.model_dim >= 1:
            try:
                attention_dims(self.model_dim, self.r, self.heads, self.split_heads)
            except ConfigError as exc:
                out.extend(f"model.{p}" for p in exc.problems)
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        return asdict(self)


def cross_schedule(cross_mode, num_layers):
    """List of (encoder layer index, uses cross values) for one decoder stage.

    The ``ahead``/``behind`` modes split at ``num_layers // 2``: layers on
    the named side take their values from the encoder, the rest attend to
    their own features. The ``*_only`` variants drop the other side entirely.
    """
    half = num_layers // 2
    layers = range(num_layers)
    if cross_mode == "all":
        return [(l, True) for l in layers]
    if cross_mode == "none":
        return [(l, False) for l in layers]
    if cross_mode == "ahead":
        return [(l, l < half) for l in layers]
    if cross_mode == "behind":
        return [(l, l >= half) for l in layers]
    if cross_mode == "ahead_only":
        return [(l, True) for l in layers if l < half]
    if cross_mode == "behind_only":
        return [(l, True) for l in layers if l >= half]
    raise ConfigError(f"unknown cross_mode {cross_mode!r}")


@dataclass
class Linear:
    w: Tensor  # in x out
    b: Tensor

    def __call__(self, x):
        return tn.add(tn.matmul(x, self.w), self.b)

    def parameters(self):
        return {"w": self.w, "b": self.b}


def init_linear(rng, fan_in, fan_out):
    return Linear(uniform_init(rng, (fan_in, fan_out), fan_in), uniform_init(rng, (fan_out,), fan_in))


@dataclass
class EncoderParams:
    in_proj: Linear
    blocks: List[BlockParams]
    classifier: Linear


@dataclass
class DecoderParams:
    in_proj: Linear  # classes -> model_dim
    layers: List[int]  # aligned encoder layer per decoder layer
    fuse: List[Linear]  # 2 * model_dim -> model_dim, one per layer
    blocks: List[BlockParams]
    classifier: Linear


@dataclass
class CetModel:
    config: ModelConfig
    encoder: EncoderParams
    decoders: List[DecoderParams] = field(default_factory=list)

    def named_parameters(self):
        """Ordered mapping name -> parameter tensor (stable across runs)."""
        out = {}

        def put(prefix, params):
            for k, v in params.items():
                out[f"{prefix}.{k}"] = v

        enc = self.encoder
        put("encoder.in_proj", enc.in_proj.parameters())
        for i, blk in enumerate(enc.blocks):
            put(f"encoder.blocks.{i}", blk.parameters())
        put("encoder.classifier", enc.classifier.parameters())
        for s, dec in enumerate(self.decoders):
            put(f"decoders.{s}.in_proj", dec.in_proj.parameters())
            for l, fuse, blk in zip(dec.layers, dec.fuse, dec.blocks):
                put(f"decoders.{s}.fuse.{l}", fuse.parameters())
                put(f"decoders.{s}.blocks.{l}", blk.parameters())
            put(f"decoders.{s}.classifier", dec.classifier.parameters())
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def init_model(config, seed=0):
    """Build a model with seeded centred-uniform weights (bound 1/sqrt(fan_in))."""
    cfg = config.validate()
    rng = np.random.default_rng(seed)
    D, C, c = cfg.input_dim, cfg.model_dim, cfg.num_classes
    block_kw = dict(r=cfg.r, heads=cfg.heads, split_heads=cfg.split_heads, window=cfg.window)
    encoder = EncoderParams(
        in_proj=init_linear(rng, D, C),
        blocks=[init_block(rng, C, i, **block_kw) for i in range(cfg.num_layers)],
        classifier=init_linear(rng, C, c),
    )
    decoders = []
    for _ in range(cfg.num_decoders):
        layers = [l for l, _ in cross_schedule(cfg.cross_mode, cfg.num_layers)]
        in_proj = init_linear(rng, c, C)
        fuse, blocks = [], []
        for l in layers:
            fuse.append(init_linear(rng, 2 * C, C))
            blocks.append(init_block(rng, C, l, **block_kw))
        decoders.append(DecoderParams(in_proj, layers, fuse, blocks, init_linear(rng, C, c)))
    return CetModel(cfg, encoder, decoders)


@dataclass
class StageOutputs:
    """Per-stage classifier outputs (encoder first) and retained encoder features.

    ``embeddings[s]`` is the classifier input of stage ``s`` and
    ``classifier_weights[s]`` its classifier weight matrix (width x classes);
    the circle loss compares the two.
    """
    logits: List[Tensor]
    embeddings: List[Tensor]
    classifier_weights: List[Tensor]
    encoder_layer_features: List[Tensor]

    @property
    def probs(self):
        return [tn.softmax_rows(z) for z in self.logits]

    @property
    def final_logits(self):
        return self.logits[-1]

    def __len__(self):
        return len(self.logits)


def _check_input(x, cfg):
    x = tn.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"expected T x {cfg.input_dim} frame features, got shape {x.shape}")
    return x


def _encode(x, model):
    enc = model.encoder
    h = enc.in_proj(x)
    feats = []
    for blk in enc.blocks:
        h = self_attention_block(h, blk)
        feats.append(h)
    return h, enc.classifier(h), feats


def encoder_forward(x, model):
    """Frame probabilities of the encoder stage and its per-layer features."""
    x = _check_input(x, model.config)
    _, logits, feats = _encode(x, model)
    return tn.softmax_rows(logits), feats


def _decode(prev_probs, layer_features, decoder, cross_mode):
    schedule = cross_schedule(cross_mode, len(layer_features))
    if [l for l, _ in schedule] != list(decoder.layers):
        raise ConfigError(
            f"decoder aligned to layers {list(decoder.layers)} but cross mode {cross_mode!r} "
            f"over {len(layer_features)} encoder features expects {[l for l, _ in schedule]}")
    h = decoder.in_proj(prev_probs)
    for (l, cross), fuse, blk in zip(schedule, decoder.fuse, decoder.blocks):
        enc = layer_features[l]
        qk = fuse(tn.concat_channels(enc, h))
        h = self_attention_block(qk, blk, cross_v=enc if cross else None)
    return h, decoder.classifier(h)


def decoder_forward(prev_probs, layer_features, decoder, cross_mode):
    """Refined frame probabilities from one decoder stage."""
    _, logits = _decode(prev_probs, layer_features, decoder, cross_mode)
    return tn.softmax_rows(logits)


def model_forward(x, model):
    x = _check_input(x, model.config)
    h, logits, feats = _encode(x, model)
    out = StageOutputs([logits], [h], [model.encoder.classifier.w], feats)
    for dec in model.decoders:
        h, logits = _decode(tn.softmax_rows(logits), feats, dec, model.config.cross_mode)
        out.logits.append(logits)
        out.embeddings.append(h)
        out.classifier_weights.append(dec.classifier.w)
    return out


def predict(model, features):
    """Per-frame argmax of the final stage."""
    with tn.no_grad():
        out = model_forward(features, model)
    return np.argmax(out.final_logits.data, axis=1)


def save_model(path, model, meta=None):
    """Write ``model`` as a CETM checkpoint; ``meta`` is any JSON-serialisable dict."""
    from .formats import write_checkpoint

    config = {"model": model.config.to_dict(), "meta": meta or {}}
    write_checkpoint(path, config, {k: v.data for k, v in model.named_parameters().items()})


def load_model(path):
    """Return (model, meta) from a CETM checkpoint."""
    from .errors import FormatError
    from .formats import read_checkpoint

    config, tensors = read_checkpoint(path)
    try:
        cfg = ModelConfig(**config["model"])
        model = init_model(cfg)
    except (KeyError, TypeError, ConfigError) as exc:
        raise FormatError(f"invalid model config block ({exc})", path) from None
    params = model.named_parameters()
    missing = [k for k in params if k not in tensors]
    extra = [k for k in tensors if k not in params]
    if missing or extra:
        raise FormatError(f"parameter set mismatch: missing {missing[:5]}, unexpected {extra[:5]}", path)
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise FormatError(f"{name}: stored shape {tensors[name].shape}, model expects {p.shape}", path)
        p.data = tensors[name].copy()
    return model, config.get("meta", {})
