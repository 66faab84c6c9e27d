"""Skip-prediction network: two stacked GRUs encode the observed first half
into ``x_half``; each second-half track vector ``x_i`` is enriched as
``[x_i ; x_half ; x_half * relu(proj(x_i))]``; a two-layer MLP with four
sigmoid outputs predicts skip plus three auxiliary interaction flags per
position. Training minimizes masked, task-weighted binary cross-entropy.

The gates of a GRU step read the previous output state:

    u_t = sigmoid(W_u^x x_t + W_u^s o_{t-1} + b_u)
    r_t = sigmoid(W_r^x x_t + W_r^s o_{t-1} + b_r)
    s_t = tanh(W^x x_t + W^s (r_t * o_{t-1}) + b_s)
    o_t = (1 - u_t) * o_{t-1} + u_t * s_t

The context_type slot of a triplet carries a vocabulary index; it is swapped
for a trainable dense embedding row before entering the first GRU layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import HALF_LEN, PaddedBatch, Session, TrackRecord, pad_batch, split_halves
from .errors import ConfigError, DegenerateBatchError, ShapeError
from .features import FeaturePipeline

CTX_EMBED_WIDTH = 8
TASK_WEIGHTS = (1.0, 0.2, 0.2, 0.2)
ACTIVATION_VARIANTS = ("relu", "elu")


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    span = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-span, span, size=(rows, cols))


def affine(x: ad.Node, w: ad.Node, b: ad.Node) -> ad.Node:
    return ad.add(ad.matmul(x, w), b)


@dataclass
class VariantConfig:
    """One axis point of the model family: activation, width, normalization."""

    activation: str = "relu"
    hidden_size: int = 96
    use_batchnorm: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATION_VARIANTS:
            raise ConfigError(f"activation must be one of {ACTIVATION_VARIANTS}, "
                              f"got {self.activation!r}")
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be positive, got {self.hidden_size}")

    def to_dict(self) -> dict:
        return {"activation": self.activation, "hidden_size": self.hidden_size,
                "use_batchnorm": self.use_batchnorm}

    @classmethod
    def from_dict(cls, d: dict) -> "VariantConfig":
        return cls(**d)


@dataclass
class ModelDims:
    """Input-facing dimensions the parameter shapes are derived from."""

    d_trip: int
    d_doub: int
    ctx_col: int
    ctx_vocab: int
    ctx_width: int = CTX_EMBED_WIDTH

    @property
    def gru_input(self) -> int:
        return self.d_trip - 1 + self.ctx_width

    @classmethod
    def from_pipeline(cls, pipeline: FeaturePipeline) -> "ModelDims":
        return cls(
            d_trip=pipeline.d_trip,
            d_doub=pipeline.d_doub,
            ctx_col=pipeline.triplet_ctx_col,
            ctx_vocab=pipeline.context_vocab_size,
        )

    def to_dict(self) -> dict:
        return {"d_trip": self.d_trip, "d_doub": self.d_doub, "ctx_col": self.ctx_col,
                "ctx_vocab": self.ctx_vocab, "ctx_width": self.ctx_width}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(**d)


@dataclass
class GruParams:
    w_ux: ad.Node
    w_us: ad.Node
    w_rx: ad.Node
    w_rs: ad.Node
    w_x: ad.Node
    w_s: ad.Node
    b_u: ad.Node
    b_r: ad.Node
    b_s: ad.Node

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden: int) -> "GruParams":
        return cls(
            w_ux=ad.parameter(glorot(rng, input_dim, hidden)),
            w_us=ad.parameter(glorot(rng, hidden, hidden)),
            w_rx=ad.parameter(glorot(rng, input_dim, hidden)),
            w_rs=ad.parameter(glorot(rng, hidden, hidden)),
            w_x=ad.parameter(glorot(rng, input_dim, hidden)),
            w_s=ad.parameter(glorot(rng, hidden, hidden)),
            b_u=ad.parameter(np.zeros((1, hidden))),
            b_r=ad.parameter(np.zeros((1, hidden))),
            b_s=ad.parameter(np.zeros((1, hidden))),
        )

    def named(self, prefix: str) -> dict[str, ad.Node]:
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("w_ux", "w_us", "w_rx", "w_rs", "w_x", "w_s",
                             "b_u", "b_r", "b_s")}


class ModelParams:
    """All trainable weights plus the frozen architecture configuration."""

    def __init__(self, variant: VariantConfig, dims: ModelDims, seed: int = 0):
        self.variant = variant
        self.dims = dims
        rng = np.random.default_rng(seed)
        h = variant.hidden_size
        self.gru1 = GruParams.create(rng, dims.gru_input, h)
        self.gru2 = GruParams.create(rng, h, h)
        self.proj_w = ad.parameter(glorot(rng, dims.d_doub, 2 * h))
        self.proj_b = ad.parameter(np.zeros((1, 2 * h)))
        d_enr = dims.d_doub + 4 * h
        self.head_w1 = ad.parameter(glorot(rng, d_enr, 2 * h))
        self.head_b1 = ad.parameter(np.zeros((1, 2 * h)))
        self.head_w2 = ad.parameter(glorot(rng, 2 * h, 2 * h))
        self.head_b2 = ad.parameter(np.zeros((1, 2 * h)))
        self.head_w3 = ad.parameter(glorot(rng, 2 * h, len(TASK_WEIGHTS)))
        self.head_b3 = ad.parameter(np.zeros((1, len(TASK_WEIGHTS))))
        self.ctx_embedding = ad.parameter(glorot(rng, dims.ctx_vocab, dims.ctx_width))
        if variant.use_batchnorm:
            self.bn1 = ad.BatchNormState.create(2 * h)
            self.bn2 = ad.BatchNormState.create(2 * h)
        else:
            self.bn1 = self.bn2 = None

    @property
    def d_enriched(self) -> int:
        return self.dims.d_doub + 4 * self.variant.hidden_size

    def named_parameters(self) -> dict[str, ad.Node]:
        params = {}
        params.update(self.gru1.named("gru1"))
        params.update(self.gru2.named("gru2"))
        params.update({
            "proj.w": self.proj_w, "proj.b": self.proj_b,
            "head.w1": self.head_w1, "head.b1": self.head_b1,
            "head.w2": self.head_w2, "head.b2": self.head_b2,
            "head.w3": self.head_w3, "head.b3": self.head_b3,
            "ctx_embedding": self.ctx_embedding,
        })
        if self.bn1 is not None:
            params.update({
                "bn1.gamma": self.bn1.gamma, "bn1.beta": self.bn1.beta,
                "bn2.gamma": self.bn2.gamma, "bn2.beta": self.bn2.beta,
            })
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        """Every array needed to reproduce inference, running stats included."""
        state = {name: node.value.copy() for name, node in self.named_parameters().items()}
        if self.bn1 is not None:
            state["bn1.running_mean"] = self.bn1.running_mean.copy()
            state["bn1.running_var"] = self.bn1.running_var.copy()
            state["bn2.running_mean"] = self.bn2.running_mean.copy()
            state["bn2.running_var"] = self.bn2.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        expected = set(params)
        if self.bn1 is not None:
            expected |= {"bn1.running_mean", "bn1.running_var",
                         "bn2.running_mean", "bn2.running_var"}
        if set(state) != expected:
            missing = expected - set(state)
            extra = set(state) - expected
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, node in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != node.value.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} "
                                 f"!= expected {node.value.shape}")
            node.value = arr.copy()
            node.grad = np.zeros_like(arr)
        if self.bn1 is not None:
            for bn, prefix in ((self.bn1, "bn1"), (self.bn2, "bn2")):
                bn.running_mean = np.asarray(state[f"{prefix}.running_mean"], dtype=np.float64).copy()
                bn.running_var = np.asarray(state[f"{prefix}.running_var"], dtype=np.float64).copy()


def gru_step(x: ad.Node, o_prev: ad.Node, p: GruParams) -> ad.Node:
    if x.shape[0] != o_prev.shape[0]:
        raise ShapeError(f"gru_step batch mismatch: {x.shape} vs {o_prev.shape}")
    u = ad.sigmoid(ad.add(affine(x, p.w_ux, p.b_u), ad.matmul(o_prev, p.w_us)))
    r = ad.sigmoid(ad.add(affine(x, p.w_rx, p.b_r), ad.matmul(o_prev, p.w_rs)))
    s = ad.tanh(ad.add(affine(x, p.w_x, p.b_s), ad.matmul(ad.hadamard(r, o_prev), p.w_s)))
    ones = ad.constant(np.ones(u.shape))
    return ad.add(ad.hadamard(ad.sub(ones, u), o_prev), ad.hadamard(u, s))


def _step_input(step: np.ndarray, params: ModelParams) -> ad.Node:
    """Swap the context-index column for trainable embedding rows."""
    dims = params.dims
    idx = step[:, dims.ctx_col].astype(np.int64)
    if (idx < 0).any() or (idx >= dims.ctx_vocab).any():
        raise ShapeError(f"context index outside vocabulary of size {dims.ctx_vocab}")
    onehot = np.zeros((step.shape[0], dims.ctx_vocab))
    onehot[np.arange(step.shape[0]), idx] = 1.0
    numeric = np.delete(step, dims.ctx_col, axis=1)
    return ad.concat_cols([
        ad.constant(numeric),
        ad.matmul(ad.constant(onehot), params.ctx_embedding),
    ])


def encode_first_half(first_half: np.ndarray, params: ModelParams) -> ad.Node:
    """Run both GRU layers over the padded first half; concat final states."""
    if first_half.ndim != 3 or first_half.shape[1] != HALF_LEN:
        raise ShapeError(f"first_half must be [batch, {HALF_LEN}, d_trip], "
                         f"got {first_half.shape}")
    if first_half.shape[2] != params.dims.d_trip:
        raise ShapeError(f"first_half width {first_half.shape[2]} "
                         f"!= d_trip {params.dims.d_trip}")
    b = first_half.shape[0]
    h = params.variant.hidden_size
    o1 = ad.constant(np.zeros((b, h)))
    o2 = ad.constant(np.zeros((b, h)))
    for t in range(HALF_LEN):
        x_t = _step_input(first_half[:, t, :], params)
        o1 = gru_step(x_t, o1, params.gru1)
        o2 = gru_step(o1, o2, params.gru2)
    return ad.concat_cols([o1, o2])


def enrich(x_i: ad.Node, x_half: ad.Node, params: ModelParams) -> ad.Node:
    if x_i.shape[1] != params.dims.d_doub:
        raise ShapeError(f"enrich: doublet width {x_i.shape[1]} "
                         f"!= d_doub {params.dims.d_doub}")
    gate = ad.relu(affine(x_i, params.proj_w, params.proj_b))
    return ad.concat_cols([x_i, x_half, ad.hadamard(x_half, gate)])


def classify(enriched: ad.Node, params: ModelParams, mode: str) -> ad.Node:
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    act = params.variant.activation
    a1 = affine(enriched, params.head_w1, params.head_b1)
    if params.bn1 is not None:
        a1 = ad.batchnorm(a1, params.bn1, mode)
    h1 = ad.activation(a1, act)
    a2 = affine(h1, params.head_w2, params.head_b2)
    if params.bn2 is not None:
        a2 = ad.batchnorm(a2, params.bn2, mode)
    h2 = ad.activation(a2, act)
    return ad.sigmoid(affine(h2, params.head_w3, params.head_b3))


def flatten_position_major(batch: PaddedBatch) -> tuple[np.ndarray, np.ndarray]:
    """Targets and mask flattened to match forward_batch rows (t * batch + b)."""
    targets = batch.targets.transpose(1, 0, 2).reshape(-1, batch.targets.shape[2])
    mask = batch.mask.T.reshape(-1)
    return targets, mask


def forward_batch(batch: PaddedBatch, params: ModelParams, mode: str) -> ad.Node:
    """Probabilities [HALF_LEN * batch, 4]; row t * batch + b is session b, step t."""
    x_half = encode_first_half(batch.first_half, params)
    enriched = ad.concat_rows([
        enrich(ad.constant(batch.second_half[:, t, :]), x_half, params)
        for t in range(HALF_LEN)
    ])
    return classify(enriched, params, mode)


def loss(probs: ad.Node, targets: np.ndarray, mask: np.ndarray,
         task_weights: tuple = TASK_WEIGHTS) -> ad.Node:
    """Mean over unmasked positions of the task-weighted BCE sum."""
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if probs.shape != targets.shape or mask.shape != (probs.shape[0],):
        raise ShapeError(f"loss: probs {probs.shape}, targets {targets.shape}, "
                         f"mask {mask.shape} misaligned")
    n_real = int(mask.sum())
    if n_real == 0:
        raise DegenerateBatchError("loss over an all-masked batch")
    weights = mask[:, None].astype(np.float64) * np.asarray(task_weights)[None, :]
    per_entry = ad.bce(probs, targets)
    return ad.scale(ad.sum_all(ad.hadamard(per_entry, ad.constant(weights))), 1.0 / n_real)


def predict_probs(
    sessions: list[Session],
    pipeline: FeaturePipeline,
    tracks: dict[str, TrackRecord],
    params: ModelParams,
    batch_size: int = 256,
) -> dict[str, np.ndarray]:
    """Per-session skip probabilities for the real (unpadded) second half."""
    out: dict[str, np.ndarray] = {}
    for lo in range(0, len(sessions), batch_size):
        chunk = sessions[lo:lo + batch_size]
        batch = pad_batch(chunk, pipeline, tracks)
        probs = forward_batch(batch, params, "infer")
        values = probs.value.reshape(HALF_LEN, batch.size, len(TASK_WEIGHTS))
        for b, session_id in enumerate(batch.session_ids):
            out[session_id] = values[: batch.second_lengths[b], b, 0].copy()
    return out


def predict_session(
    session: Session,
    pipeline: FeaturePipeline,
    tracks: dict[str, TrackRecord],
    params: ModelParams,
    threshold: float = 0.5,
) -> np.ndarray:
    """Boolean skip predictions for the session's second half."""
    probs = predict_probs([session], pipeline, tracks, params)[session.session_id]
    return probs >= threshold
