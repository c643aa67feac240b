"""The hybrid 1-D CNN and its plain-CNN sibling.

Segment path (valid padding everywhere, lengths asserted):

    3840x1 -> drop 0.2 -> conv k64 s4 + relu -> 945x8 -> avgpool k4 s4
    -> 236x8 -> batchnorm -> drop 0.5 -> conv k32 s2 + relu -> 103x16
    -> avgpool k4 s4 -> 25x16 -> batchnorm -> drop 0.5 -> conv k16 s1 + relu
    -> 10x8 -> global average pool -> 8

The hybrid variant sends the 19 hand-crafted features through dropout and a
dense+relu layer to width 4, concatenates with the pooled 8 to width 12, and
classifies from there; the plain variant classifies straight from the 8.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ShapeError, UsageError
from . import layers

SEGMENT_LEN = 3840
N_FEATURES = 19
FEATURE_HIDDEN = 4

#: (kernel, stride, in_channels, out_channels) per conv layer.
CONV_SPECS = (
    (64, 4, 1, 8),
    (32, 2, 8, 16),
    (16, 1, 16, 8),
)
POOL_KERNEL = 4
POOL_STRIDE = 4

#: Expected lengths after conv1, pool1, conv2, pool2, conv3.
EXPECTED_LENGTHS = (945, 236, 103, 25, 10)
FLATTEN_WIDTH = 8
CONCAT_WIDTH = FLATTEN_WIDTH + FEATURE_HIDDEN  # 12

#: Per-layer parameter counts, trainable plus batch-norm running statistics.
EXPECTED_PARAM_COUNTS = {
    "conv1": 520,
    "bn1": 32,
    "conv2": 4112,
    "bn2": 64,
    "conv3": 2056,
    "feat_dense": 80,
}

DEFAULT_DROPOUT_INPUT = 0.2
DEFAULT_DROPOUT_BLOCK = 0.5
DEFAULT_DROPOUT_FEATURE = 0.2


@dataclass
class ModelState:
    """All parameters, batch-norm running statistics, and Adam buffers."""

    variant: str  # "hcnn" or "cnn"
    n_classes: int
    params: dict[str, np.ndarray]
    bn_stats: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    dropout_input: float = DEFAULT_DROPOUT_INPUT
    dropout_block: float = DEFAULT_DROPOUT_BLOCK
    dropout_feature: float = DEFAULT_DROPOUT_FEATURE

    def n_parameters(self) -> int:
        """Trainable plus running-statistic parameter count."""
        return sum(p.size for p in self.params.values()) + sum(
            s.size for s in self.bn_stats.values()
        )

    def copy_weights(self) -> dict:
        """Snapshot of parameters and running statistics (for best-epoch restore)."""
        return {
            "params": {k: v.copy() for k, v in self.params.items()},
            "bn_stats": {k: v.copy() for k, v in self.bn_stats.items()},
        }

    def load_weights(self, snapshot: dict) -> None:
        for k, v in snapshot["params"].items():
            self.params[k] = v.copy()
        for k, v in snapshot["bn_stats"].items():
            self.bn_stats[k] = v.copy()

    def astype(self, dtype) -> "ModelState":
        """A deep copy with every array cast to dtype (float64 for checking)."""
        return replace(
            self,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            bn_stats={k: v.astype(dtype) for k, v in self.bn_stats.items()},
            adam_m={k: v.astype(dtype) for k, v in self.adam_m.items()},
            adam_v={k: v.astype(dtype) for k, v in self.adam_v.items()},
        )


@dataclass
class ForwardTrace:
    """Per-layer caches from a train-mode forward, consumed by backward()."""

    caches: dict = field(default_factory=dict)
    batch_size: int = 0
    variant: str = ""


def _glorot(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _out_width(variant: str) -> int:
    return CONCAT_WIDTH if variant == "hcnn" else FLATTEN_WIDTH


def build_model(
    variant: str,
    n_classes: int,
    seed,
    dropout_input: float = DEFAULT_DROPOUT_INPUT,
    dropout_block: float = DEFAULT_DROPOUT_BLOCK,
    dropout_feature: float = DEFAULT_DROPOUT_FEATURE,
) -> ModelState:
    """Initialize a model: Glorot-uniform weights, zero biases, unit BN.

    Args:
        variant: "hcnn" (with the feature branch) or "cnn" (segments only).
        n_classes: 2 or 3.
        seed: anything np.random.default_rng accepts.

    Raises:
        UsageError: unknown variant or class count.
    """
    if variant not in ("hcnn", "cnn"):
        raise UsageError(f"unknown variant {variant!r}")
    if n_classes not in (2, 3):
        raise UsageError(f"n_classes must be 2 or 3, got {n_classes}")

    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    bn_stats: dict[str, np.ndarray] = {}

    length = SEGMENT_LEN
    expected = iter(EXPECTED_LENGTHS)
    for i, (kernel, stride, c_in, c_out) in enumerate(CONV_SPECS, start=1):
        params[f"conv{i}/w"] = _glorot(
            rng, (kernel, c_in, c_out), kernel * c_in, kernel * c_out
        )
        params[f"conv{i}/b"] = np.zeros(c_out, dtype=np.float32)
        length = layers.conv_out_len(length, kernel, stride)
        if length != next(expected):
            raise ShapeError(f"conv{i} output length {length} off the expected chain")
        if i < len(CONV_SPECS):
            length = layers.conv_out_len(length, POOL_KERNEL, POOL_STRIDE)
            if length != next(expected):
                raise ShapeError(f"pool{i} output length {length} off the expected chain")
            params[f"bn{i}/gamma"] = np.ones(c_out, dtype=np.float32)
            params[f"bn{i}/beta"] = np.zeros(c_out, dtype=np.float32)
            bn_stats[f"bn{i}/mean"] = np.zeros(c_out, dtype=np.float32)
            bn_stats[f"bn{i}/var"] = np.ones(c_out, dtype=np.float32)

    if variant == "hcnn":
        params["feat_dense/w"] = _glorot(
            rng, (N_FEATURES, FEATURE_HIDDEN), N_FEATURES, FEATURE_HIDDEN
        )
        params["feat_dense/b"] = np.zeros(FEATURE_HIDDEN, dtype=np.float32)
    width = _out_width(variant)
    params["out_dense/w"] = _glorot(rng, (width, n_classes), width, n_classes)
    params["out_dense/b"] = np.zeros(n_classes, dtype=np.float32)

    model = ModelState(
        variant=variant,
        n_classes=n_classes,
        params=params,
        bn_stats=bn_stats,
        adam_m={k: np.zeros_like(v) for k, v in params.items()},
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
        dropout_input=dropout_input,
        dropout_block=dropout_block,
        dropout_feature=dropout_feature,
    )
    _check_parameter_counts(model)
    return model


def layer_parameter_counts(model: ModelState) -> dict[str, int]:
    """Per-layer parameter counts, batch-norm running statistics included."""
    counts: dict[str, int] = {}
    for i in (1, 2, 3):
        counts[f"conv{i}"] = model.params[f"conv{i}/w"].size + model.params[f"conv{i}/b"].size
    for i in (1, 2):
        counts[f"bn{i}"] = (
            model.params[f"bn{i}/gamma"].size
            + model.params[f"bn{i}/beta"].size
            + model.bn_stats[f"bn{i}/mean"].size
            + model.bn_stats[f"bn{i}/var"].size
        )
    if model.variant == "hcnn":
        counts["feat_dense"] = (
            model.params["feat_dense/w"].size + model.params["feat_dense/b"].size
        )
    counts["out_dense"] = (
        model.params["out_dense/w"].size + model.params["out_dense/b"].size
    )
    return counts


def _check_parameter_counts(model: ModelState) -> None:
    counts = layer_parameter_counts(model)
    expected = dict(EXPECTED_PARAM_COUNTS)
    if model.variant == "cnn":
        expected.pop("feat_dense")
    expected["out_dense"] = (_out_width(model.variant) + 1) * model.n_classes
    for name, want in expected.items():
        if counts[name] != want:
            raise ShapeError(
                f"{name}: {counts[name]} parameters, expected {want}"
            )


def _as_batch(segments, dtype):
    x = np.asarray(segments, dtype=dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1] != SEGMENT_LEN or x.shape[2] != 1:
        raise ShapeError(
            f"segment input must be ({SEGMENT_LEN},) or (batch, {SEGMENT_LEN}), "
            f"got {np.asarray(segments).shape}"
        )
    return x, single


def _assert_shape(name, arr, expected_tail):
    if arr.shape[1:] != expected_tail:
        raise ShapeError(f"{name}: shape {arr.shape[1:]}, expected {expected_tail}")


def forward(
    model: ModelState,
    segments,
    features=None,
    mode: str = "infer",
    rng=None,
    bn_batch_stats: bool | None = None,
):
    """Run the network.

    Args:
        model: parameters and state.
        segments: one segment (3840,) or a batch (B, 3840).
        features: (19,) or (B, 19); required for "hcnn", rejected for "cnn".
        mode: "train" (dropout active, batch-norm batch statistics, running
            statistics updated, trace returned) or "infer" (deterministic).
        rng: numpy Generator; required in train mode when dropout rates > 0.
        bn_batch_stats: override which statistics batch norm uses (defaults
            to True in train mode, False in inference).

    Returns:
        (probs, trace): class probabilities, and a ForwardTrace in train mode
        (None in inference mode).
    """
    if mode not in ("train", "infer"):
        raise UsageError(f"mode must be 'train' or 'infer', got {mode!r}")
    train = mode == "train"
    if bn_batch_stats is None:
        bn_batch_stats = train
    dtype = model.params["conv1/w"].dtype
    x, single = _as_batch(segments, dtype)
    batch = x.shape[0]

    if model.variant == "hcnn":
        if features is None:
            raise UsageError("hcnn forward requires the 19-feature input")
        feats = np.asarray(features, dtype=dtype)
        if feats.ndim == 1:
            feats = feats[None, :]
        if feats.shape != (batch, N_FEATURES):
            raise ShapeError(
                f"features must be (batch, {N_FEATURES}), got {feats.shape}"
            )
    else:
        if features is not None:
            raise UsageError("cnn variant takes no feature input")
        feats = None

    rates = (model.dropout_input, model.dropout_block, model.dropout_feature)
    if train and rng is None and any(r > 0 for r in rates):
        raise UsageError("train-mode forward with dropout needs an rng")

    c = {}
    h, c["drop_in"] = layers.dropout_forward(x, model.dropout_input, rng, train)

    for i in (1, 2, 3):
        kernel, stride, _, _ = CONV_SPECS[i - 1]
        h, c[f"conv{i}"] = layers.conv1d_forward(
            h, model.params[f"conv{i}/w"], model.params[f"conv{i}/b"], stride
        )
        h, c[f"relu{i}"] = layers.relu_forward(h)
        if i < 3:
            h, c[f"pool{i}"] = layers.avgpool1d_forward(h, POOL_KERNEL, POOL_STRIDE)
            h, c[f"bn{i}"], new_mean, new_var = layers.batchnorm_forward(
                h,
                model.params[f"bn{i}/gamma"],
                model.params[f"bn{i}/beta"],
                model.bn_stats[f"bn{i}/mean"],
                model.bn_stats[f"bn{i}/var"],
                train=bn_batch_stats,
            )
            if train:
                model.bn_stats[f"bn{i}/mean"] = new_mean.astype(dtype)
                model.bn_stats[f"bn{i}/var"] = new_var.astype(dtype)
            h, c[f"drop{i}"] = layers.dropout_forward(
                h, model.dropout_block, rng, train
            )
    _assert_shape("conv3 output", h, (EXPECTED_LENGTHS[-1], CONV_SPECS[-1][3]))

    h, c["gap"] = layers.global_avgpool_forward(h)
    _assert_shape("global pool output", h, (FLATTEN_WIDTH,))

    if model.variant == "hcnn":
        f, c["drop_feat"] = layers.dropout_forward(
            feats, model.dropout_feature, rng, train
        )
        f, c["feat_dense"] = layers.dense_forward(
            f, model.params["feat_dense/w"], model.params["feat_dense/b"]
        )
        f, c["feat_relu"] = layers.relu_forward(f)
        _assert_shape("feature dense output", f, (FEATURE_HIDDEN,))
        h = np.concatenate([h, f], axis=1)
        _assert_shape("concat output", h, (CONCAT_WIDTH,))

    logits, c["out_dense"] = layers.dense_forward(
        h, model.params["out_dense/w"], model.params["out_dense/b"]
    )
    probs = layers.softmax(logits)

    trace = ForwardTrace(caches=c, batch_size=batch, variant=model.variant) if train else None
    if single:
        probs = probs[0]
    return probs, trace


def backward(
    model: ModelState,
    trace: ForwardTrace,
    probs,
    targets_onehot,
    class_weights,
) -> dict[str, np.ndarray]:
    """Gradients of the mean weighted cross-entropy for every trainable parameter.

    Args:
        trace: the ForwardTrace from the train-mode forward of this batch.
        probs: probabilities that forward returned.
        targets_onehot: (B, n_classes) one-hot targets.
        class_weights: per-class loss weights.

    Raises:
        UsageError: missing trace or one not matching this batch.
    """
    if trace is None or not trace.caches:
        raise UsageError("backward needs the trace of a train-mode forward")
    p = np.atleast_2d(np.asarray(probs))
    t = np.atleast_2d(np.asarray(targets_onehot, dtype=p.dtype))
    if p.shape[0] != trace.batch_size or trace.variant != model.variant:
        raise UsageError("trace does not match this batch/model")

    c = trace.caches
    grads: dict[str, np.ndarray] = {}
    dlogits = layers.cce_softmax_grad(p, t, class_weights)
    dh, grads["out_dense/w"], grads["out_dense/b"] = layers.dense_backward(
        dlogits, c["out_dense"]
    )

    if model.variant == "hcnn":
        dh, df = dh[:, :FLATTEN_WIDTH], dh[:, FLATTEN_WIDTH:]
        df = layers.relu_backward(df, c["feat_relu"])
        _, grads["feat_dense/w"], grads["feat_dense/b"] = layers.dense_backward(
            df, c["feat_dense"]
        )

    dh = layers.global_avgpool_backward(dh, c["gap"])

    for i in (3, 2, 1):
        if i < 3:
            dh = layers.dropout_backward(dh, c[f"drop{i}"])
            dh, grads[f"bn{i}/gamma"], grads[f"bn{i}/beta"] = layers.batchnorm_backward(
                dh, c[f"bn{i}"]
            )
            dh = layers.avgpool1d_backward(dh, c[f"pool{i}"])
        dh = layers.relu_backward(dh, c[f"relu{i}"])
        dh, grads[f"conv{i}/w"], grads[f"conv{i}/b"] = layers.conv1d_backward(
            dh, c[f"conv{i}"]
        )
    return grads


def predict(model: ModelState, segments, features=None, batch_size: int = 512):
    """Class predictions (argmax of inference-mode probabilities)."""
    x = np.asarray(segments)
    if x.ndim == 1:
        x = x[None, :]
    out = []
    for lo in range(0, len(x), batch_size):
        hi = lo + batch_size
        fb = None if features is None else np.asarray(features)[lo:hi]
        probs, _ = forward(model, x[lo:hi], fb, mode="infer")
        out.append(np.argmax(np.atleast_2d(probs), axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
