"""Fusion classifier over pre-extracted text/image feature sequences.

The full model projects both modalities into a shared space, exchanges
information through bi-directional cross-modal attention with residual
connections, pools each sequence, rescales the pooled features with
per-sample sigmoid gates, and classifies the concatenation with a ReLU
MLP. Restricted variants (single modality, plain concatenation, ungated
attention) reuse subsets of the same graph, so comparisons across
variants differ only in the pieces under study.

When both sequences have length 1, the attention softmax runs over a
single element and collapses to 1, so the attended features reduce to a
closed form (value-projected other modality plus residual). Batched
forward passes exploit this by stacking records as rows of one matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import sqrt

import numpy as np

from .autodiff import Node, Tape, as_matrix
from .data import FeatureRecord, stack_single_rows
from .errors import InputError, UsageError

Array = np.ndarray


class Variant(str, Enum):
    TEXT_ONLY = "text-only"
    IMAGE_ONLY = "image-only"
    CONCAT = "concat"
    FIXED_ATTENTION = "fixed-attention"
    FULL = "full"


# fixed reporting order: single modalities, then increasingly complete fusion
VARIANT_ORDER = (
    Variant.TEXT_ONLY,
    Variant.IMAGE_ONLY,
    Variant.CONCAT,
    Variant.FIXED_ATTENTION,
    Variant.FULL,
)

_ATTENTION_NAMES = (
    "attn_q_text", "attn_k_image", "attn_v_image",
    "attn_q_image", "attn_k_text", "attn_v_text",
)
_GATE_NAMES = ("gate_w1", "gate_b1", "gate_w_text", "gate_b_text", "gate_w_image", "gate_b_image")
_BIAS_NAMES = frozenset({"gate_b1", "gate_b_text", "gate_b_image", "cls_b1", "cls_b2"})


@dataclass(frozen=True)
class HyperConfig:
    """Architecture settings; d_t/d_i must match the dataset."""

    d_t: int
    d_i: int
    d_c: int = 8
    d_k: int | None = None
    gate_hidden: int = 16
    cls_hidden: int = 32
    variant: Variant = Variant.FULL
    init_scale: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.d_k is None:
            object.__setattr__(self, "d_k", self.d_c)
        object.__setattr__(self, "variant", Variant(self.variant))
        if min(self.d_t, self.d_i, self.d_c, self.gate_hidden, self.cls_hidden) < 1:
            raise InputError("model dimensions must all be at least 1")
        if self.d_k != self.d_c:
            raise InputError(f"d_k must equal d_c (got d_k={self.d_k}, d_c={self.d_c})")
        if self.init_scale <= 0.0:
            raise InputError(f"init_scale must be positive, got {self.init_scale}")

    @property
    def classifier_input_width(self) -> int:
        if self.variant in (Variant.TEXT_ONLY, Variant.IMAGE_ONLY):
            return self.d_c
        return 2 * self.d_c


def parameter_shapes(config: HyperConfig) -> dict[str, tuple[int, int]]:
    """Parameter names and shapes for a variant, in canonical order."""
    v = config.variant
    shapes: dict[str, tuple[int, int]] = {}
    if v is not Variant.IMAGE_ONLY:
        shapes["proj_text"] = (config.d_t, config.d_c)
    if v is not Variant.TEXT_ONLY:
        shapes["proj_image"] = (config.d_i, config.d_c)
    if v in (Variant.FIXED_ATTENTION, Variant.FULL):
        for name in _ATTENTION_NAMES:
            shapes[name] = (config.d_c, config.d_c)
    if v is Variant.FULL:
        shapes["gate_w1"] = (2 * config.d_c, config.gate_hidden)
        shapes["gate_b1"] = (1, config.gate_hidden)
        shapes["gate_w_text"] = (config.gate_hidden, 1)
        shapes["gate_b_text"] = (1, 1)
        shapes["gate_w_image"] = (config.gate_hidden, 1)
        shapes["gate_b_image"] = (1, 1)
    shapes["cls_w1"] = (config.classifier_input_width, config.cls_hidden)
    shapes["cls_b1"] = (1, config.cls_hidden)
    shapes["cls_w2"] = (config.cls_hidden, 2)
    shapes["cls_b2"] = (1, 2)
    return shapes


class ModelParams:
    """Named parameter matrices with a fixed iteration order."""

    def __init__(self, entries):
        items = entries.items() if hasattr(entries, "items") else entries
        self._arrays: dict[str, Array] = {
            name: as_matrix(arr, name=name) for name, arr in items
        }

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    def items(self):
        return self._arrays.items()

    def __getitem__(self, name: str) -> Array:
        return self._arrays[name]

    def set(self, name: str, values) -> None:
        """Replace an existing parameter with same-shape values."""
        current = self._arrays[name]
        arr = as_matrix(values, name=name)
        if arr.shape != current.shape:
            raise InputError(f"parameter {name} has shape {current.shape}, got {arr.shape}")
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def copy(self) -> "ModelParams":
        return ModelParams((name, arr.copy()) for name, arr in self._arrays.items())

    def entry_count(self) -> int:
        return sum(arr.size for arr in self._arrays.values())


def init_params(config: HyperConfig) -> ModelParams:
    """Seeded init: weights uniform in +-init_scale/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(config.init_seed)
    entries = []
    for name, shape in parameter_shapes(config).items():
        if name in _BIAS_NAMES:
            entries.append((name, np.zeros(shape)))
        else:
            bound = config.init_scale / sqrt(shape[0])
            entries.append((name, rng.uniform(-bound, bound, shape)))
    return ModelParams(entries)


def register_parameters(tape: Tape, params: ModelParams) -> dict[str, Node]:
    """Put every parameter on a tape as a gradient-receiving leaf."""
    return {name: tape.parameter(arr, validate=False, name=name) for name, arr in params.items()}


def check_params_match(params: ModelParams, config: HyperConfig) -> None:
    expected = parameter_shapes(config)
    if tuple(expected) != params.names:
        raise InputError(
            f"parameter names {params.names} do not match variant "
            f"{config.variant.value} (expected {tuple(expected)})"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise InputError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# -- graph builders -----------------------------------------------------------
# All builders accept matrices in either layout: per-record (rows are
# sequence positions of one record) or batched-L1 (rows are records).


def _attend_full(tape, pn, h_t, h_i, d_k):
    """Scaled dot-product cross-attention in both directions, with residuals."""
    inv = tape.constant([[1.0 / sqrt(d_k)]])
    v_i = tape.matmul(h_i, pn["attn_v_image"])
    scores_t = tape.matmul(tape.matmul(h_t, pn["attn_q_text"]),
                           tape.transpose(tape.matmul(h_i, pn["attn_k_image"])))
    att_t = tape.add(tape.matmul(tape.softmax_rows(tape.scale_by_scalar(scores_t, inv)), v_i), h_t)

    v_t = tape.matmul(h_t, pn["attn_v_text"])
    scores_i = tape.matmul(tape.matmul(h_i, pn["attn_q_image"]),
                           tape.transpose(tape.matmul(h_t, pn["attn_k_text"])))
    att_i = tape.add(tape.matmul(tape.softmax_rows(tape.scale_by_scalar(scores_i, inv)), v_t), h_i)
    return att_t, att_i


def _attend_rows(tape, pn, h_t, h_i):
    """Length-1 closed form: attention weight is 1, so only value + residual remain."""
    att_t = tape.add(tape.matmul(h_i, pn["attn_v_image"]), h_t)
    att_i = tape.add(tape.matmul(h_t, pn["attn_v_text"]), h_i)
    return att_t, att_i


def _gate_alphas(tape, pn, pooled_t, pooled_i):
    joint = tape.concat_cols(pooled_t, pooled_i)
    hidden = tape.relu(tape.add_row_bias(tape.matmul(joint, pn["gate_w1"]), pn["gate_b1"]))
    alpha_t = tape.sigmoid(tape.add_row_bias(tape.matmul(hidden, pn["gate_w_text"]), pn["gate_b_text"]))
    alpha_i = tape.sigmoid(tape.add_row_bias(tape.matmul(hidden, pn["gate_w_image"]), pn["gate_b_image"]))
    return alpha_t, alpha_i


def _classify(tape, pn, features):
    hidden = tape.relu(tape.add_row_bias(tape.matmul(features, pn["cls_w1"]), pn["cls_b1"]))
    return tape.add_row_bias(tape.matmul(hidden, pn["cls_w2"]), pn["cls_b2"])


def build_logits(tape, pn, config, x_text, x_image, *, per_record, gate_override=None):
    """Wire the variant's graph; returns the interesting nodes by name.

    per_record=True treats the inputs as one record's sequences and mean-
    pools after attention; per_record=False treats rows as independent
    length-1 records (pooling is then the identity).
    """
    v = config.variant
    pool = (lambda n: tape.mean_rows(n)) if per_record else (lambda n: n)
    nodes: dict[str, Node] = {}

    if v is Variant.TEXT_ONLY:
        h_t = tape.matmul(x_text, pn["proj_text"])
        nodes["projected_text"] = h_t
        nodes["fused"] = pool(h_t)
    elif v is Variant.IMAGE_ONLY:
        h_i = tape.matmul(x_image, pn["proj_image"])
        nodes["projected_image"] = h_i
        nodes["fused"] = pool(h_i)
    else:
        h_t = tape.matmul(x_text, pn["proj_text"])
        h_i = tape.matmul(x_image, pn["proj_image"])
        nodes["projected_text"] = h_t
        nodes["projected_image"] = h_i
        if v is Variant.CONCAT:
            nodes["fused"] = tape.concat_cols(pool(h_t), pool(h_i))
        else:
            if per_record:
                att_t, att_i = _attend_full(tape, pn, h_t, h_i, config.d_k)
            else:
                att_t, att_i = _attend_rows(tape, pn, h_t, h_i)
            nodes["attended_text"] = att_t
            nodes["attended_image"] = att_i
            pooled_t, pooled_i = pool(att_t), pool(att_i)
            if v is Variant.FULL:
                if gate_override is None:
                    alpha_t, alpha_i = _gate_alphas(tape, pn, pooled_t, pooled_i)
                else:
                    m = pooled_t.value.shape[0]
                    alpha_t = tape.constant(np.full((m, 1), float(gate_override[0])))
                    alpha_i = tape.constant(np.full((m, 1), float(gate_override[1])))
                nodes["alpha_text"] = alpha_t
                nodes["alpha_image"] = alpha_i
                nodes["fused"] = tape.concat_cols(tape.scale_rows(pooled_t, alpha_t),
                                                  tape.scale_rows(pooled_i, alpha_i))
            else:
                nodes["fused"] = tape.concat_cols(pooled_t, pooled_i)
    nodes["logits"] = _classify(tape, pn, nodes["fused"])
    return nodes


# -- forward passes ------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Intermediate values of one record's forward pass (None where the
    variant has no such stage)."""

    logits: Array
    projected_text: Array | None = None
    projected_image: Array | None = None
    attended_text: Array | None = None
    attended_image: Array | None = None
    alpha_text: float | None = None
    alpha_image: float | None = None
    fused: Array | None = None


@dataclass
class BatchOutputs:
    logits: Array
    alpha_text: Array | None = None
    alpha_image: Array | None = None


def check_record_dims(config: HyperConfig, record: FeatureRecord) -> None:
    if record.text_features.shape[1] != config.d_t:
        raise InputError(
            f"record text width {record.text_features.shape[1]} does not match d_t={config.d_t}"
        )
    if record.image_features.shape[1] != config.d_i:
        raise InputError(
            f"record image width {record.image_features.shape[1]} does not match d_i={config.d_i}"
        )


def forward(params: ModelParams, config: HyperConfig, record: FeatureRecord,
            *, gate_override=None) -> ForwardTrace:
    """Run one record through the variant's graph and capture the trace."""
    check_record_dims(config, record)
    tape = Tape(grad=False)
    pn = register_parameters(tape, params)
    x_t = tape.constant(record.text_features, name="text_features")
    x_i = tape.constant(record.image_features, name="image_features")
    nodes = build_logits(tape, pn, config, x_t, x_i, per_record=True, gate_override=gate_override)

    def val(key):
        return nodes[key].value.copy() if key in nodes else None

    alpha_t = nodes["alpha_text"].value[0, 0] if "alpha_text" in nodes else None
    alpha_i = nodes["alpha_image"].value[0, 0] if "alpha_image" in nodes else None
    return ForwardTrace(
        logits=nodes["logits"].value.copy(),
        projected_text=val("projected_text"),
        projected_image=val("projected_image"),
        attended_text=val("attended_text"),
        attended_image=val("attended_image"),
        alpha_text=None if alpha_t is None else float(alpha_t),
        alpha_image=None if alpha_i is None else float(alpha_i),
        fused=val("fused"),
    )


def forward_batch(params: ModelParams, config: HyperConfig, records,
                  *, gate_override=None) -> BatchOutputs:
    """Forward a batch; vectorized when both sequences have length 1."""
    records = list(records)
    if not records:
        raise InputError("forward_batch needs at least one record")
    for r in records:
        check_record_dims(config, r)
    single_step = all(
        r.text_features.shape[0] == 1 and r.image_features.shape[0] == 1 for r in records
    )
    if single_step:
        x_t_arr, x_i_arr = stack_single_rows(records)
        tape = Tape(grad=False)
        pn = register_parameters(tape, params)
        nodes = build_logits(tape, pn, config,
                             tape.constant(x_t_arr, name="text_features"),
                             tape.constant(x_i_arr, name="image_features"),
                             per_record=False, gate_override=gate_override)
        return BatchOutputs(
            logits=nodes["logits"].value.copy(),
            alpha_text=nodes["alpha_text"].value[:, 0].copy() if "alpha_text" in nodes else None,
            alpha_image=nodes["alpha_image"].value[:, 0].copy() if "alpha_image" in nodes else None,
        )

    traces = [forward(params, config, r, gate_override=gate_override) for r in records]
    logits = np.concatenate([t.logits for t in traces], axis=0)
    if traces[0].alpha_text is None:
        return BatchOutputs(logits=logits)
    return BatchOutputs(
        logits=logits,
        alpha_text=np.array([t.alpha_text for t in traces]),
        alpha_image=np.array([t.alpha_image for t in traces]),
    )


def predict_proba(trace: ForwardTrace) -> tuple[float, float]:
    """Class probabilities (p_real, p_fake) from a trace's logits."""
    z = trace.logits[0] - trace.logits[0].max()
    e = np.exp(z)
    p = e / e.sum()
    return float(p[0]), float(p[1])


def predict_labels(outputs: BatchOutputs) -> np.ndarray:
    """Hard labels by logit argmax (ties resolve to 0/real)."""
    return np.argmax(outputs.logits, axis=1).astype(np.intp)


# -- standalone stage wrappers --------------------------------------------------
# Array-in/array-out views of the graph stages, for inspection and testing.


def _needs(params: ModelParams, names) -> None:
    missing = [n for n in names if n not in params]
    if missing:
        raise UsageError(f"params are missing {missing}; wrong variant for this operation")


def project(params: ModelParams, record: FeatureRecord) -> tuple[Array, Array]:
    """Project both feature sequences into the shared space."""
    _needs(params, ("proj_text", "proj_image"))
    return (record.text_features @ params["proj_text"],
            record.image_features @ params["proj_image"])


def cross_attend(params: ModelParams, h_text, h_image, d_k: int) -> tuple[Array, Array]:
    """Bi-directional cross-attention with residuals over projected sequences."""
    _needs(params, _ATTENTION_NAMES)
    tape = Tape(grad=False)
    pn = register_parameters(tape, params)
    att_t, att_i = _attend_full(tape, pn, tape.constant(h_text, name="h_text"),
                                tape.constant(h_image, name="h_image"), d_k)
    return att_t.value.copy(), att_i.value.copy()


def gate(params: ModelParams, attended_text, attended_image):
    """Pool attended sequences and compute the two modality gates.

    Returns (alpha_text, alpha_image, pooled_text, pooled_image).
    """
    _needs(params, _GATE_NAMES)
    tape = Tape(grad=False)
    pn = register_parameters(tape, params)
    pooled_t = tape.mean_rows(tape.constant(attended_text, name="attended_text"))
    pooled_i = tape.mean_rows(tape.constant(attended_image, name="attended_image"))
    alpha_t, alpha_i = _gate_alphas(tape, pn, pooled_t, pooled_i)
    return (float(alpha_t.value[0, 0]), float(alpha_i.value[0, 0]),
            pooled_t.value.copy(), pooled_i.value.copy())


def fuse_classify(params: ModelParams, alpha_text: float, alpha_image: float,
                  pooled_text, pooled_image) -> Array:
    """Scale pooled features by their gates, concatenate, and classify."""
    _needs(params, ("cls_w1", "cls_b1", "cls_w2", "cls_b2"))
    tape = Tape(grad=False)
    pn = register_parameters(tape, params)
    scaled_t = tape.scale_by_scalar(tape.constant(pooled_text, name="pooled_text"),
                                    tape.constant([[alpha_text]]))
    scaled_i = tape.scale_by_scalar(tape.constant(pooled_image, name="pooled_image"),
                                    tape.constant([[alpha_image]]))
    return _classify(tape, pn, tape.concat_cols(scaled_t, scaled_i)).value.copy()
