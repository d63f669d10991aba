"""Dense two-head network with exact manual backpropagation and Adam.

Architecture (a desk-scale stand-in for a CNN backbone over image pixels;
inputs are precomputed feature vectors):

    input (D) -> trunk hidden layers (ReLU) -> FC layer (ReLU)
                                                -> Emb head (linear)
                                                -> Attr head (sigmoid, clamped)

The trunk defaults to (256, 2048) so the FC layer sees a 2048-wide input;
FC defaults to 1024, the embedding head to 512. Embeddings are not
L2-normalized here; the cosine kernel divides by the norms itself.

Parameters live in an ordered name -> ndarray dict ("trunk0.w", "trunk0.b",
..., "fc.w", "fc.b", "emb.w", "emb.b", "attr.w", "attr.b"); weights are
(fan_in, fan_out) so a layer computes x @ w + b.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .similarity import PROB_EPS

CHECKPOINT_FORMAT = "sgml-ckpt-v1"


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    trunk_dims: tuple[int, ...] = (256, 2048)
    fc_dim: int = 1024
    emb_dim: int = 512
    attr_dim: int = 64

    def __post_init__(self):
        dims = (self.input_dim, *self.trunk_dims, self.fc_dim, self.emb_dim, self.attr_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "trunk_dims", tuple(int(d) for d in self.trunk_dims))

    def layer_plan(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every layer, in forward order."""
        plan: list[tuple[str, int, int]] = []
        prev = self.input_dim
        for i, width in enumerate(self.trunk_dims):
            plan.append((f"trunk{i}", prev, width))
            prev = width
        plan.append(("fc", prev, self.fc_dim))
        plan.append(("emb", self.fc_dim, self.emb_dim))
        plan.append(("attr", self.fc_dim, self.attr_dim))
        return plan

    def param_count(self) -> int:
        return sum(fi * fo + fo for _, fi, fo in self.layer_plan())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "trunk_dims": list(self.trunk_dims),
            "fc_dim": self.fc_dim,
            "emb_dim": self.emb_dim,
            "attr_dim": self.attr_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkShape":
        return cls(int(d["input_dim"]), tuple(int(x) for x in d["trunk_dims"]),
                   int(d["fc_dim"]), int(d["emb_dim"]), int(d["attr_dim"]))


@dataclass
class NetworkParams:
    shape: NetworkShape
    tensors: dict[str, np.ndarray]

    def count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.shape, {k: v.copy() for k, v in self.tensors.items()})

    def finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())


def init_params(shape: NetworkShape, rng: np.random.Generator) -> NetworkParams:
    """Fan-scaled uniform init: w ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0."""
    tensors: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in shape.layer_plan():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[f"{name}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"{name}.b"] = np.zeros(fan_out)
    return NetworkParams(shape, tensors)


@dataclass
class ForwardOutputs:
    trunk_out: np.ndarray
    fc_out: np.ndarray
    embeddings: np.ndarray
    attr_probs: np.ndarray


@dataclass
class ForwardCache:
    """Per-layer activations retained for one backward pass."""

    inputs: np.ndarray
    trunk_pre: list[np.ndarray]
    trunk_act: list[np.ndarray]
    fc_pre: np.ndarray
    fc_act: np.ndarray
    attr_raw: np.ndarray      # sigmoid outputs before clamping
    clamp_active: np.ndarray  # bool mask where the clamp pinned a probability


def forward(params: NetworkParams, inputs) -> tuple[ForwardOutputs, ForwardCache]:
    """Batched forward pass; rows of the outputs align with input rows.

    Attr probabilities are sigmoid outputs clamped into
    [PROB_EPS, 1 - PROB_EPS].

    Raises:
        ValueError: on non-finite inputs or a width mismatch.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.shape.input_dim:
        raise ValueError(f"input width {x.shape[1]} != {params.shape.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in network input")
    t = params.tensors
    act = x
    trunk_pre: list[np.ndarray] = []
    trunk_act: list[np.ndarray] = []
    for i in range(len(params.shape.trunk_dims)):
        pre = act @ t[f"trunk{i}.w"] + t[f"trunk{i}.b"]
        act = np.maximum(pre, 0.0)
        trunk_pre.append(pre)
        trunk_act.append(act)
    fc_pre = act @ t["fc.w"] + t["fc.b"]
    fc_act = np.maximum(fc_pre, 0.0)
    emb = fc_act @ t["emb.w"] + t["emb.b"]
    attr_z = fc_act @ t["attr.w"] + t["attr.b"]
    attr_raw = _sigmoid(attr_z)
    attr_probs = np.clip(attr_raw, PROB_EPS, 1.0 - PROB_EPS)
    clamp_active = attr_probs != attr_raw
    outs = ForwardOutputs(act, fc_act, emb, attr_probs)
    cache = ForwardCache(x, trunk_pre, trunk_act, fc_pre, fc_act, attr_raw, clamp_active)
    return outs, cache


def _sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def backward(params: NetworkParams, cache: ForwardCache, d_embeddings,
             d_attr_probs) -> dict[str, np.ndarray]:
    """Exact gradients of the loss w.r.t. every parameter.

    d_embeddings and d_attr_probs are the upstream gradients on the two head
    outputs (clamped probabilities for the attr head; entries pinned by the
    clamp contribute nothing). Either may be None for a head that received no
    loss.
    """
    t = params.tensors
    batch = cache.inputs.shape[0]
    if d_embeddings is None:
        d_embeddings = np.zeros((batch, params.shape.emb_dim))
    if d_attr_probs is None:
        d_attr_probs = np.zeros((batch, params.shape.attr_dim))
    d_embeddings = np.asarray(d_embeddings, dtype=np.float64)
    d_attr_probs = np.asarray(d_attr_probs, dtype=np.float64)
    if d_embeddings.shape != (batch, params.shape.emb_dim) or \
            d_attr_probs.shape != (batch, params.shape.attr_dim):
        raise ValueError("upstream gradient shapes do not match the cached batch")

    grads: dict[str, np.ndarray] = {}
    # Attr head: through the clamp (zero where pinned) and the sigmoid.
    d_attr_z = d_attr_probs * cache.attr_raw * (1.0 - cache.attr_raw)
    d_attr_z[cache.clamp_active] = 0.0
    grads["attr.w"] = cache.fc_act.T @ d_attr_z
    grads["attr.b"] = d_attr_z.sum(axis=0)
    d_fc_act = d_attr_z @ t["attr.w"].T
    # Emb head is linear.
    grads["emb.w"] = cache.fc_act.T @ d_embeddings
    grads["emb.b"] = d_embeddings.sum(axis=0)
    d_fc_act += d_embeddings @ t["emb.w"].T
    # FC layer.
    d_fc_pre = d_fc_act * (cache.fc_pre > 0.0)
    trunk_out = cache.trunk_act[-1] if cache.trunk_act else cache.inputs
    grads["fc.w"] = trunk_out.T @ d_fc_pre
    grads["fc.b"] = d_fc_pre.sum(axis=0)
    d_act = d_fc_pre @ t["fc.w"].T
    # Trunk layers, last to first.
    for i in range(len(cache.trunk_pre) - 1, -1, -1):
        d_pre = d_act * (cache.trunk_pre[i] > 0.0)
        below = cache.trunk_act[i - 1] if i > 0 else cache.inputs
        grads[f"trunk{i}.w"] = below.T @ d_pre
        grads[f"trunk{i}.b"] = d_pre.sum(axis=0)
        d_act = d_pre @ t[f"trunk{i}.w"].T
    return grads


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators, one slot per parameter tensor."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: NetworkParams, lr: float) -> "AdamState":
        state = cls(lr=lr)
        for k, t in params.tensors.items():
            state.m[k] = np.zeros_like(t)
            state.v[k] = np.zeros_like(t)
        return state

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()})


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[NetworkParams, AdamState]:
    """One in-place Adam update; raises on non-finite gradients."""
    for k in params.tensors:
        if k not in grads:
            raise ValueError(f"missing gradient for {k}")
        if not np.isfinite(grads[k]).all():
            raise FloatingPointError(f"non-finite gradient in {k}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in params.tensors.items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class Checkpoint:
    params: NetworkParams
    optimizer: AdamState | None
    step: int
    config_hash: str


def config_hash(config_dict: dict) -> str:
    """Stable sha256 over the canonical JSON of a resolved config."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the versioned JSON checkpoint; floats round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "shape": ckpt.params.shape.to_dict(),
        "params": {k: t.tolist() for k, t in ckpt.params.tensors.items()},
        "optimizer": None,
        "step": ckpt.step,
        "config_hash": ckpt.config_hash,
    }
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        doc["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step,
            "m": {k: t.tolist() for k, t in opt.m.items()},
            "v": {k: t.tolist() for k, t in opt.v.items()},
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r}")
    shape = NetworkShape.from_dict(doc["shape"])
    tensors = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    params = NetworkParams(shape, tensors)
    expected = {f"{name}.{kind}" for name, _, _ in shape.layer_plan() for kind in ("w", "b")}
    if set(tensors) != expected:
        raise ValueError("checkpoint parameters do not match the declared shape")
    optimizer = None
    if doc.get("optimizer") is not None:
        o = doc["optimizer"]
        optimizer = AdamState(
            lr=float(o["lr"]), beta1=float(o["beta1"]), beta2=float(o["beta2"]),
            eps=float(o["eps"]), step=int(o["step"]),
            m={k: np.asarray(v, dtype=np.float64) for k, v in o["m"].items()},
            v={k: np.asarray(v, dtype=np.float64) for k, v in o["v"].items()},
        )
    return Checkpoint(params, optimizer, int(doc["step"]), str(doc["config_hash"]))
