"""Desk-scale multi-task frame classifier with hand-written backprop.

Per frame, the input is the raw feature vector stacked with ``w`` neighbours
on each side (zero padded), giving ``d = raw_dim * (2w + 1)``.  A single tanh
layer feeds three heads:

* binary head: logistic genuineness probability,
* SPL head: softmax over the 8 joint (class, position) labels,
* transition head: logistic probability of being next to a class change.

The training loss is ``BCE(binary) + lambda * aux`` where ``aux`` is the SPL
cross-entropy, the transition BCE, or zero depending on the loss mode.  All
means are taken over the frames of a mini-batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .labelcore import FAKE, NUM_JOINT, JointLabelSeq, transition_labels
from .mixer import MixConfig, MixSample, augment_batch

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Shape or configuration problem."""


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""


class LossMode(str, Enum):
    BINARY_ONLY = "binary"
    BINARY_PLUS_SPL = "spl"
    BINARY_PLUS_TRANSITION = "transition"


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


PARAM_NAMES = ("w_enc", "b_enc", "w_bin", "b_bin", "w_spl", "b_spl", "w_tr", "b_tr")


@dataclass
class ToyModelParams:
    """Weights of the shared encoder and the three heads.

    ``w_enc`` has shape ``(d, h)``; head weights are ``(h,)`` or ``(h, 8)``;
    biases of the logistic heads are stored as shape ``(1,)`` arrays.
    """

    raw_dim: int
    context: int
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_bin: np.ndarray
    b_bin: np.ndarray
    w_spl: np.ndarray
    b_spl: np.ndarray
    w_tr: np.ndarray
    b_tr: np.ndarray

    def __post_init__(self):
        d, h = self.input_dim, self.hidden_dim
        expected = {
            "w_enc": (d, h),
            "b_enc": (h,),
            "w_bin": (h,),
            "b_bin": (1,),
            "w_spl": (h, NUM_JOINT),
            "b_spl": (NUM_JOINT,),
            "w_tr": (h,),
            "b_tr": (1,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ModelError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def input_dim(self) -> int:
        return self.raw_dim * (2 * self.context + 1)

    @property
    def hidden_dim(self) -> int:
        return int(np.asarray(self.w_enc).shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ToyModelParams":
        return replace(self, **{n: np.array(a, dtype=np.float64) for n, a in arrays.items()})

    def copy(self) -> "ToyModelParams":
        return self.with_arrays({n: a.copy() for n, a in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def __eq__(self, other):
        if not isinstance(other, ToyModelParams):
            return NotImplemented
        return (
            self.raw_dim == other.raw_dim
            and self.context == other.context
            and all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))
        )


def init_params(raw_dim: int, hidden_dim: int, context: int, rng: np.random.Generator) -> ToyModelParams:
    """Uniform(-0.1, 0.1) weights, zero biases; all heads always allocated."""
    if raw_dim < 1 or hidden_dim < 1 or context < 0:
        raise ModelError(f"bad dimensions raw_dim={raw_dim} hidden_dim={hidden_dim} context={context}")
    d = raw_dim * (2 * context + 1)

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return ToyModelParams(
        raw_dim=raw_dim,
        context=context,
        w_enc=u(d, hidden_dim),
        b_enc=np.zeros(hidden_dim),
        w_bin=u(hidden_dim),
        b_bin=np.zeros(1),
        w_spl=u(hidden_dim, NUM_JOINT),
        b_spl=np.zeros(NUM_JOINT),
        w_tr=u(hidden_dim),
        b_tr=np.zeros(1),
    )


def zero_params(raw_dim: int, hidden_dim: int, context: int) -> ToyModelParams:
    p = init_params(raw_dim, hidden_dim, context, np.random.default_rng(0))
    return p.with_arrays({n: np.zeros_like(a) for n, a in p.arrays().items()})


@dataclass(frozen=True, eq=False)
class FrameFeatureSeq:
    """Raw per-frame features, ``T x raw_dim``."""

    features: np.ndarray
    resolution_ms: float = 20.0

    def __post_init__(self):
        arr = np.array(self.features, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ModelError(f"features must be a non-empty T x d matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ModelError("features must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)

    @property
    def T(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


def stack_context(raw: np.ndarray, w: int) -> np.ndarray:
    """Row t becomes ``[raw[t-w], ..., raw[t], ..., raw[t+w]]`` with zero padding."""
    T, r = raw.shape
    if w == 0:
        return np.array(raw, dtype=np.float64)
    padded = np.zeros((T + 2 * w, r))
    padded[w : w + T] = raw
    return np.concatenate([padded[k : k + T] for k in range(2 * w + 1)], axis=1)


def unstack_context_grad(grad: np.ndarray, raw_dim: int, w: int) -> np.ndarray:
    """Adjoint of :func:`stack_context`: fold stacked-input gradients onto raw frames."""
    T = grad.shape[0]
    out = np.zeros((T + 2 * w, raw_dim))
    for k in range(2 * w + 1):
        out[k : k + T] += grad[:, k * raw_dim : (k + 1) * raw_dim]
    return out[w : w + T]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def _log_softmax(u):
    m = u.max(axis=1, keepdims=True)
    shifted = u - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class ForwardOutput:
    p_genuine: np.ndarray
    p_spl: np.ndarray
    p_transition: np.ndarray
    logit_genuine: np.ndarray
    logits_spl: np.ndarray
    logit_transition: np.ndarray
    hidden: np.ndarray
    inputs: np.ndarray


def _as_raw(feats) -> np.ndarray:
    if isinstance(feats, FrameFeatureSeq):
        return feats.features
    arr = np.asarray(feats, dtype=np.float64)
    if arr.ndim != 2:
        raise ModelError(f"features must be 2-D, got shape {arr.shape}")
    return arr


def forward_stacked(params: ToyModelParams, x: np.ndarray) -> ForwardOutput:
    """Forward pass on already context-stacked inputs (``N x d``)."""
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ModelError(f"input has shape {x.shape}, model expects (*, {params.input_dim})")
    h = np.tanh(x @ params.w_enc + params.b_enc)
    s = h @ params.w_bin + params.b_bin[0]
    u = h @ params.w_spl + params.b_spl
    q = h @ params.w_tr + params.b_tr[0]
    return ForwardOutput(
        p_genuine=_sigmoid(s),
        p_spl=np.exp(_log_softmax(u)),
        p_transition=_sigmoid(q),
        logit_genuine=s,
        logits_spl=u,
        logit_transition=q,
        hidden=h,
        inputs=x,
    )


def forward(params: ToyModelParams, feats) -> ForwardOutput:
    raw = _as_raw(feats)
    if raw.shape[1] != params.raw_dim:
        raise ModelError(f"features have {raw.shape[1]} columns, model expects {params.raw_dim}")
    return forward_stacked(params, stack_context(raw, params.context))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    loss_mode: LossMode = LossMode.BINARY_PLUS_SPL
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    context: int = 0
    hidden_dim: int = 16
    optimizer: Optimizer = Optimizer.SGD

    def __post_init__(self):
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if not self.lam >= 0:
            raise ModelError(f"lambda must be >= 0, got {self.lam}")
        if self.context < 0:
            raise ModelError(f"context window must be >= 0, got {self.context}")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ModelError("epochs >= 0, batch_size >= 1 and hidden_dim >= 1 are required")
        if not self.learning_rate > 0:
            raise ModelError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class Targets:
    """Per-frame training targets derived from joint labels."""

    genuine: np.ndarray
    joint: np.ndarray
    transition: np.ndarray

    @classmethod
    def from_labels(cls, labels: JointLabelSeq | Sequence[JointLabelSeq]) -> "Targets":
        if isinstance(labels, JointLabelSeq):
            labels = [labels]
        return cls(
            genuine=np.concatenate([(l.classes != FAKE).astype(np.float64) for l in labels]),
            joint=np.concatenate([l.joint for l in labels]),
            transition=np.concatenate(
                [transition_labels(l.frame_classes).astype(np.float64) for l in labels]
            ),
        )

    def __len__(self):
        return int(self.genuine.size)


@dataclass(frozen=True)
class LossParts:
    total: float
    bce: float
    aux: float


def loss_parts(outputs: ForwardOutput, target, cfg: TrainConfig) -> LossParts:
    tg = target if isinstance(target, Targets) else Targets.from_labels(target)
    n = len(tg)
    if outputs.logit_genuine.shape[0] != n:
        raise ModelError(f"{outputs.logit_genuine.shape[0]} predicted frames vs {n} target frames")
    s = outputs.logit_genuine
    bce = float(np.mean(_softplus(s) - tg.genuine * s))
    if cfg.loss_mode is LossMode.BINARY_PLUS_SPL:
        logp = _log_softmax(outputs.logits_spl)
        aux = float(-np.mean(logp[np.arange(n), tg.joint]))
    elif cfg.loss_mode is LossMode.BINARY_PLUS_TRANSITION:
        q = outputs.logit_transition
        aux = float(np.mean(_softplus(q) - tg.transition * q))
    else:
        aux = 0.0
    return LossParts(bce + cfg.lam * aux, bce, aux)


def loss(outputs: ForwardOutput, target, cfg: TrainConfig) -> float:
    return loss_parts(outputs, target, cfg).total


def _backward(params: ToyModelParams, out: ForwardOutput, tg: Targets, cfg: TrainConfig) -> dict[str, np.ndarray]:
    n = len(tg)
    h = out.hidden
    ds = (out.p_genuine - tg.genuine) / n
    grads = {
        "w_bin": h.T @ ds,
        "b_bin": np.array([ds.sum()]),
        "w_spl": np.zeros_like(params.w_spl),
        "b_spl": np.zeros_like(params.b_spl),
        "w_tr": np.zeros_like(params.w_tr),
        "b_tr": np.zeros(1),
    }
    dh = np.outer(ds, params.w_bin)
    if cfg.loss_mode is LossMode.BINARY_PLUS_SPL and cfg.lam != 0:
        du = out.p_spl.copy()
        du[np.arange(n), tg.joint] -= 1.0
        du *= cfg.lam / n
        grads["w_spl"] = h.T @ du
        grads["b_spl"] = du.sum(axis=0)
        dh += du @ params.w_spl.T
    elif cfg.loss_mode is LossMode.BINARY_PLUS_TRANSITION and cfg.lam != 0:
        dq = (out.p_transition - tg.transition) * (cfg.lam / n)
        grads["w_tr"] = h.T @ dq
        grads["b_tr"] = np.array([dq.sum()])
        dh += np.outer(dq, params.w_tr)
    dz = dh * (1.0 - h * h)
    grads["w_enc"] = out.inputs.T @ dz
    grads["b_enc"] = dz.sum(axis=0)
    return {k: grads[k] for k in PARAM_NAMES}


def gradients(params: ToyModelParams, feats, target, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Analytic gradients of the total loss, keyed like :meth:`ToyModelParams.arrays`."""
    out = forward(params, feats)
    tg = target if isinstance(target, Targets) else Targets.from_labels(target)
    if len(tg) != out.hidden.shape[0]:
        raise ModelError(f"{out.hidden.shape[0]} frames vs {len(tg)} targets")
    return _backward(params, out, tg, cfg)


def saliency(params: ToyModelParams, feats) -> np.ndarray:
    """L2 norm, per raw frame, of the gradient of the summed fake probability.

    The target is ``sum_t (1 - p_genuine(t))`` over the whole utterance;
    gradients flow back through the context stacking to the raw frames.
    """
    raw = _as_raw(feats)
    out = forward(params, raw)
    p = out.p_genuine
    ds = -p * (1.0 - p)
    dz = np.outer(ds, params.w_bin) * (1.0 - out.hidden**2)
    dx = dz @ params.w_enc.T
    draw = unstack_context_grad(dx, params.raw_dim, params.context)
    return np.linalg.norm(draw, axis=1)


@dataclass
class History:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_bce: list[float] = field(default_factory=list)
    epoch_aux: list[float] = field(default_factory=list)


CorpusItem = tuple[FrameFeatureSeq, JointLabelSeq]


def _batch_arrays(items: Sequence[CorpusItem], context: int) -> tuple[np.ndarray, Targets]:
    x = np.concatenate([stack_context(f.features, context) for f, _ in items], axis=0)
    return x, Targets.from_labels([l for _, l in items])


def _csm_batch(items: Sequence[CorpusItem], mix_cfg: MixConfig, seed: int) -> list[CorpusItem]:
    """Mix raw features (before context stacking) like waveforms."""
    samples = [MixSample(f.features, l.frame_classes, 1) for f, l in items]
    mixed = augment_batch(samples, replace(mix_cfg, seed=seed))
    res = items[0][0].resolution_ms
    return [(FrameFeatureSeq(m.waveform, res), joint) for m, joint in mixed]


class _Adam:
    def __init__(self, params: ToyModelParams, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.t = 0

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1**self.t)
            vh = self.v[k] / (1 - self.b2**self.t)
            arrays[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def train(
    corpus: Sequence[CorpusItem],
    cfg: TrainConfig,
    mix_cfg: MixConfig | None = None,
    callback: Callable[[int, ToyModelParams], None] | None = None,
) -> tuple[ToyModelParams, History]:
    """Mini-batch training; deterministic given ``cfg.seed`` (and ``mix_cfg.seed``).

    When ``mix_cfg`` is given, every mini-batch goes through CSM before
    context stacking, so the originals stay in the batch alongside the mixes.
    """
    corpus = list(corpus)
    if not corpus:
        raise ModelError("empty training corpus")
    raw_dim = corpus[0][0].dim
    for f, l in corpus:
        if f.dim != raw_dim:
            raise ModelError(f"feature dim mismatch: {f.dim} vs {raw_dim}")
        if f.T != l.T:
            raise ModelError(f"{f.T} feature rows vs {l.T} labels")

    root = np.random.SeedSequence(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    init_seq, shuffle_seq = root.spawn(2)
    params = init_params(raw_dim, cfg.hidden_dim, cfg.context, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    arrays = {k: a.copy() for k, a in params.arrays().items()}
    adam = _Adam(params, cfg.learning_rate) if cfg.optimizer is Optimizer.ADAM else None
    history = History()
    n = len(corpus)
    mix_seed = mix_cfg.seed if mix_cfg is not None else 0
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        tot = bce = aux = 0.0
        frames = 0
        for b0 in range(0, n, cfg.batch_size):
            items = [corpus[i] for i in order[b0 : b0 + cfg.batch_size]]
            if mix_cfg is not None and len(items) >= 2:
                items = _csm_batch(items, mix_cfg, (mix_seed * 1_000_003 + step) & 0xFFFFFFFFFFFFFFFF)
            step += 1
            x, tg = _batch_arrays(items, cfg.context)
            current = params.with_arrays(arrays)
            out = forward_stacked(current, x)
            parts = loss_parts(out, tg, cfg)
            if not math.isfinite(parts.total):
                raise NumericError(f"non-finite loss {parts.total} at epoch {epoch}, step {step}")
            grads = _backward(current, out, tg, cfg)
            if adam is not None:
                adam.step(arrays, grads)
            else:
                for k, g in grads.items():
                    arrays[k] -= cfg.learning_rate * g
            for k, a in arrays.items():
                if not np.all(np.isfinite(a)):
                    raise NumericError(f"{k} became non-finite at epoch {epoch}, step {step}")
            m = len(tg)
            tot += parts.total * m
            bce += parts.bce * m
            aux += parts.aux * m
            frames += m
        params = params.with_arrays(arrays)
        history.epoch_loss.append(tot / frames)
        history.epoch_bce.append(bce / frames)
        history.epoch_aux.append(aux / frames)
        log.debug("epoch %d loss %.6f", epoch, tot / frames)
        if callback is not None:
            callback(epoch, params)
    return params.with_arrays(arrays), history


def predict_scores(params: ToyModelParams, feats) -> np.ndarray:
    """Per-frame genuineness probabilities."""
    return forward(params, feats).p_genuine


def dataset_loss(params: ToyModelParams, corpus: Sequence[CorpusItem], cfg: TrainConfig) -> LossParts:
    x, tg = _batch_arrays(corpus, params.context)
    return loss_parts(forward_stacked(params, x), tg, cfg)
