"""Hybrid layer stack.

A decoder stack that mixes three attention mechanisms per a layer plan:

* ``sse_swa``: gated sparse-state linear attention merged with a sliding
  window branch. Each branch has its own QKV and output projections; the
  branch outputs are RMS-normed and summed, with the window branch scaled
  by a per-sequence dropout gate during training.
* ``moba``: block-sparse softmax attention.
* ``fa``: full causal softmax attention.

Every layer is pre-norm: RMSNorm, attention, residual add, then RMSNorm,
a SwiGLU feed-forward, residual add. The module also hosts the sensitivity
driven procedure that picks which layers to run as ``moba``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .attention import full_attention, swa
from .moba import MobaParams, moba_forward
from .sse import SSEParams, sse_forward
from .tensor_ops import ShapeError, as_f64, ensure_finite, rms_norm, silu

LAYER_KINDS = ("sse_swa", "moba", "fa")
DEFAULT_NUM_LAYERS = 36
DEFAULT_MOBA_LAYERS = (0, 1, 2, 3, 6, 12, 17, 21, 24)
DEFAULT_FA_LAYERS = (35,)


@dataclass(frozen=True)
class LayerPlan:
    """Which mechanism runs at each depth."""

    kinds: tuple[str, ...]

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in LAYER_KINDS:
                raise ValueError(f"unknown layer kind {kind!r}")

    def __len__(self) -> int:
        return len(self.kinds)

    def counts(self) -> dict[str, int]:
        return {kind: self.kinds.count(kind) for kind in LAYER_KINDS}

    def layers_of(self, kind: str) -> tuple[int, ...]:
        return tuple(i for i, item in enumerate(self.kinds) if item == kind)

    def to_json(self) -> dict:
        return {"kinds": list(self.kinds)}

    @classmethod
    def from_json(cls, obj: dict) -> "LayerPlan":
        return cls(kinds=tuple(obj["kinds"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "LayerPlan":
        return cls.from_json(json.loads(text))


def default_plan(num_layers: int = DEFAULT_NUM_LAYERS) -> LayerPlan:
    """Default hybrid plan: block-sparse layers concentrated in the lower
    half plus one mid/deep stripe, one full-attention layer at the top,
    window-merged linear attention everywhere else."""
    if num_layers != DEFAULT_NUM_LAYERS:
        raise ValueError(f"default plan is defined for {DEFAULT_NUM_LAYERS} layers")
    kinds = ["sse_swa"] * num_layers
    for i in DEFAULT_MOBA_LAYERS:
        kinds[i] = "moba"
    for i in DEFAULT_FA_LAYERS:
        kinds[i] = "fa"
    return LayerPlan(kinds=tuple(kinds))


@dataclass(frozen=True)
class StackConfig:
    """Shared hyperparameters for a stack instance.

    rope and qk_norm are reserved hooks; enabling either raises.
    """

    d_model: int = 16
    n_heads: int = 2
    d_ff: int = 32
    sse_partitions: int = 4
    sse_top_k: int = 2
    sse_feature_map: str = "silu"
    sse_qk_l2_norm: bool = False
    sse_always_selected: int | None = None
    moba_block_size: int = 4096
    moba_top_k: int = 12
    swa_window: int = 128
    merge_dropout: float = 0.5
    scale_qk: bool = True
    rope: bool = False
    qk_norm: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.merge_dropout <= 1.0:
            raise ValueError(f"merge_dropout must be in [0, 1], got {self.merge_dropout}")
        if self.rope:
            raise ValueError("rotary embeddings are a reserved hook and not implemented")
        if self.qk_norm:
            raise ValueError("qk normalization is a reserved hook and not implemented")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerParams:
    kind: str
    weights: dict[str, np.ndarray]


def _proj_set(rng, d_model: int, prefix: str) -> dict[str, np.ndarray]:
    scale = 0.2 / np.sqrt(d_model)
    return {
        f"{prefix}_wq": rng.normal(0.0, scale, (d_model, d_model)),
        f"{prefix}_wk": rng.normal(0.0, scale, (d_model, d_model)),
        f"{prefix}_wv": rng.normal(0.0, scale, (d_model, d_model)),
        f"{prefix}_wo": rng.normal(0.0, scale, (d_model, d_model)),
    }


def init_stack_params(plan: LayerPlan, config: StackConfig, seed: int = 0) -> list[LayerParams]:
    """Seeded random weights for every layer in the plan."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    params: list[LayerParams] = []
    for kind in plan.kinds:
        weights: dict[str, np.ndarray] = {
            "norm_attn": np.ones(d),
            "norm_mlp": np.ones(d),
            "mlp_w1": rng.normal(0.0, 0.2 / np.sqrt(d), (d, config.d_ff)),
            "mlp_w3": rng.normal(0.0, 0.2 / np.sqrt(d), (d, config.d_ff)),
            "mlp_w2": rng.normal(0.0, 0.2 / np.sqrt(config.d_ff), (config.d_ff, d)),
        }
        if kind == "sse_swa":
            weights.update(_proj_set(rng, d, "sse"))
            weights.update(_proj_set(rng, d, "swa"))
            weights["sse_gate"] = rng.normal(0.0, 0.2 / np.sqrt(d), (d, config.sse_partitions))
            weights["merge_norm_sse"] = np.ones(d)
            weights["merge_norm_swa"] = np.ones(d)
        else:
            weights.update(_proj_set(rng, d, kind))
        params.append(LayerParams(kind=kind, weights=weights))
    return params


def merge_gate(dropout_rate: float, rng: np.random.Generator | None, training: bool) -> float:
    """Per-sequence inverted dropout gate on the window branch.

    Training draws 0 with probability p and 1/(1-p) otherwise, so the gate
    has unit mean; inference always returns 1.
    """
    if not training or dropout_rate == 0.0:
        return 1.0
    if not 0.0 <= dropout_rate <= 1.0:
        raise ValueError(f"dropout_rate must be in [0, 1], got {dropout_rate}")
    if dropout_rate >= 1.0:
        return 0.0
    if rng is None:
        raise ValueError("training with dropout needs an rng")
    keep = rng.random() >= dropout_rate
    return (1.0 / (1.0 - dropout_rate)) if keep else 0.0


def sse_swa_block(sse_out, swa_out, norm_sse, norm_swa, dropout_rate: float = 0.0,
                  rng_seed: int = 0, training: bool = False,
                  gate: float | None = None) -> np.ndarray:
    """Merge the two branch outputs: each is RMS-normed, the window branch
    is scaled by the dropout gate, then they are summed.

    The gate is drawn from a fresh generator seeded with rng_seed unless an
    explicit gate is passed (the stack passes one from its own stream).
    """
    sse_out, swa_out = as_f64(sse_out), as_f64(swa_out)
    if sse_out.shape != swa_out.shape:
        raise ShapeError(f"branch shapes disagree: {sse_out.shape} vs {swa_out.shape}")
    if gate is None:
        gate = merge_gate(dropout_rate, np.random.default_rng(rng_seed), training)
    return rms_norm(sse_out, norm_sse) + gate * rms_norm(swa_out, norm_swa)


def _split_heads(x: np.ndarray, n_heads: int) -> list[np.ndarray]:
    d_head = x.shape[1] // n_heads
    return [x[:, h * d_head : (h + 1) * d_head] for h in range(n_heads)]


def _multihead(q, k, v, config: StackConfig, per_head) -> np.ndarray:
    if config.scale_qk:
        q = q / np.sqrt(config.d_head)
    outs = [
        per_head(qh, kh, vh)
        for qh, kh, vh in zip(
            _split_heads(q, config.n_heads),
            _split_heads(k, config.n_heads),
            _split_heads(v, config.n_heads),
        )
    ]
    return np.concatenate(outs, axis=1)


@dataclass
class StackTrace:
    """Forward pass record: final hidden plus per-layer snapshots."""

    hidden: np.ndarray
    layer_attn: list[np.ndarray] = field(default_factory=list)
    layer_hidden: list[np.ndarray] = field(default_factory=list)
    merge_gates: list[float] = field(default_factory=list)


def _attend(kind: str, normed: np.ndarray, lw: dict, config: StackConfig,
            gate: float) -> np.ndarray:
    if kind == "sse_swa":
        sse_params = SSEParams(
            num_partitions=config.sse_partitions,
            top_k=config.sse_top_k,
            gate_weight=lw["sse_gate"],
            always_selected=config.sse_always_selected,
            feature_map=config.sse_feature_map,
            qk_l2_norm=config.sse_qk_l2_norm,
        )
        sse_out = _multihead(
            normed @ lw["sse_wq"], normed @ lw["sse_wk"], normed @ lw["sse_wv"], config,
            lambda qh, kh, vh: sse_forward(normed, qh, kh, vh, sse_params).outputs,
        ) @ lw["sse_wo"]
        swa_out = _multihead(
            normed @ lw["swa_wq"], normed @ lw["swa_wk"], normed @ lw["swa_wv"], config,
            lambda qh, kh, vh: swa(qh, kh, vh, config.swa_window),
        ) @ lw["swa_wo"]
        return sse_swa_block(sse_out, swa_out, lw["merge_norm_sse"], lw["merge_norm_swa"], gate=gate)
    if kind == "moba":
        mp = MobaParams(block_size=config.moba_block_size, top_k=config.moba_top_k)
        return _multihead(
            normed @ lw["moba_wq"], normed @ lw["moba_wk"], normed @ lw["moba_wv"], config,
            lambda qh, kh, vh: moba_forward(qh, kh, vh, mp),
        ) @ lw["moba_wo"]
    if kind == "fa":
        return _multihead(
            normed @ lw["fa_wq"], normed @ lw["fa_wk"], normed @ lw["fa_wv"], config,
            full_attention,
        ) @ lw["fa_wo"]
    raise ValueError(f"unknown layer kind {kind!r}")


def stack_forward(x, params: list[LayerParams], config: StackConfig,
                  training: bool = False, seed: int = 0) -> StackTrace:
    """Run the stack on token features x of shape (n, d_model)."""
    hidden = as_f64(x).copy()
    if hidden.ndim != 2 or hidden.shape[1] != config.d_model:
        raise ShapeError(f"input shape {hidden.shape} != (n, {config.d_model})")
    rng = np.random.default_rng(seed)
    trace = StackTrace(hidden=hidden)
    for layer in params:
        lw = layer.weights
        gate = merge_gate(config.merge_dropout, rng, training) if layer.kind == "sse_swa" else 1.0
        attn = _attend(layer.kind, rms_norm(hidden, lw["norm_attn"]), lw, config, gate)
        hidden = hidden + attn
        normed = rms_norm(hidden, lw["norm_mlp"])
        hidden = hidden + (silu(normed @ lw["mlp_w1"]) * (normed @ lw["mlp_w3"])) @ lw["mlp_w2"]
        trace.layer_attn.append(attn)
        trace.layer_hidden.append(hidden)
        if layer.kind == "sse_swa":
            trace.merge_gates.append(gate)
    ensure_finite(hidden, "stack_forward")
    trace.hidden = hidden
    return trace


@dataclass(frozen=True)
class SensitivityProfile:
    """Per-layer retrieval scores measured with that layer swapped to a
    sparse mechanism, plus the all-layers baseline score."""

    baseline: float
    scores: tuple[float, ...]

    def to_json(self) -> dict:
        return {"baseline": self.baseline, "scores": list(self.scores)}

    @classmethod
    def from_json(cls, obj: dict) -> "SensitivityProfile":
        return cls(baseline=float(obj["baseline"]), scores=tuple(float(s) for s in obj["scores"]))


def select_moba_layers(profile: SensitivityProfile, drop_threshold: float) -> list[int]:
    """Pick layers whose swap score sits well below their peers.

    Scans from the deepest layer toward the shallowest. Each layer is
    compared against the median score of the already-scanned layers that
    were NOT picked; while that set is empty the median of the whole
    profile stands in, so selection depends only on relative scores. A
    layer is picked when its score falls more than drop_threshold below
    the reference. Returns the picked indices in ascending order.
    """
    if len(profile.scores) == 0:
        raise ValueError("sensitivity profile has no scores")
    if drop_threshold < 0:
        raise ValueError(f"drop_threshold must be >= 0, got {drop_threshold}")
    global_median = median(profile.scores)
    picked: list[int] = []
    kept_scores: list[float] = []
    for idx in range(len(profile.scores) - 1, -1, -1):
        reference = median(kept_scores) if kept_scores else global_median
        if profile.scores[idx] < reference - drop_threshold:
            picked.append(idx)
        else:
            kept_scores.append(profile.scores[idx])
    return sorted(picked)
