"""Finite-difference verification of the backward pass.

The check clones the model into float64 with dropout disabled, evaluates the
loss with batch-norm in batch mode, and compares analytic gradients against
central differences on a random sample of parameters.

Central differences are meaningless across a relu kink: if nudging a
parameter by +-h flips any relu gate, the two loss evaluations sit on
different linear pieces and the quotient no longer estimates the derivative
at the center point.  Such samples are rejected and replacements drawn, so
every reported comparison is made where the loss is locally smooth.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from . import layers, model as model_mod

FD_STEP = 1e-4
_RELU_CACHES = ("relu1", "relu2", "relu3", "feat_relu")


def _loss_and_gates(model, segments, features, targets_onehot, class_weights):
    probs, trace = model_mod.forward(model, segments, features, mode="train", rng=None)
    loss = layers.weighted_cce(probs, targets_onehot, class_weights)
    gates = tuple(
        trace.caches[name] > 0 for name in _RELU_CACHES if name in trace.caches
    )
    return loss, gates


def _same_gates(a, b) -> bool:
    return all(np.array_equal(ga, gb) for ga, gb in zip(a, b))


def gradient_check(
    model,
    segments,
    targets_onehot,
    features=None,
    class_weights=None,
    n_samples: int = 200,
    seed: int = 0,
    fd_step: float = FD_STEP,
) -> float:
    """Max relative error between backward() and central finite differences.

    Args:
        model: any ModelState; it is copied to float64 and its dropout rates
            are zeroed, so the loss is deterministic.
        segments: (B, 3840) microbatch.
        targets_onehot: (B, n_classes).
        features: (B, 19), hcnn only.
        class_weights: per-class loss weights (defaults to ones).
        n_samples: how many valid parameter probes are required.
        seed: sampling seed.

    Returns:
        The worst relative error over the probed parameters.  Parameters
        whose analytic and numeric gradients are both below 1e-7 contribute
        their absolute difference instead (a ratio of noise is meaningless).

    Raises:
        UsageError: too few kink-free parameters to reach n_samples.
    """
    m64 = model.astype(np.float64)
    m64.dropout_input = 0.0
    m64.dropout_block = 0.0
    m64.dropout_feature = 0.0
    segments = np.asarray(segments, dtype=np.float64)
    targets_onehot = np.atleast_2d(np.asarray(targets_onehot, dtype=np.float64))
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
    if class_weights is None:
        class_weights = np.ones(m64.n_classes)

    probs, trace = model_mod.forward(m64, segments, features, mode="train", rng=None)
    analytic = model_mod.backward(m64, trace, probs, targets_onehot, class_weights)

    names = sorted(m64.params)
    sizes = np.array([m64.params[n].size for n in names])
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(offsets[-1])

    worst = 0.0
    checked = 0
    for flat in candidates:
        if checked >= n_samples:
            break
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = np.unravel_index(flat - offsets[which], m64.params[name].shape)
        saved = m64.params[name][idx]

        m64.params[name][idx] = saved + fd_step
        loss_hi, gates_hi = _loss_and_gates(
            m64, segments, features, targets_onehot, class_weights
        )
        m64.params[name][idx] = saved - fd_step
        loss_lo, gates_lo = _loss_and_gates(
            m64, segments, features, targets_onehot, class_weights
        )
        m64.params[name][idx] = saved
        if not _same_gates(gates_hi, gates_lo):
            continue  # the step crossed a relu kink; comparison is invalid

        numeric = (loss_hi - loss_lo) / (2.0 * fd_step)
        exact = float(analytic[name][idx])
        scale = max(abs(exact), abs(numeric))
        err = abs(exact - numeric) if scale < 1e-7 else abs(exact - numeric) / scale
        worst = max(worst, err)
        checked += 1

    if checked < n_samples:
        raise UsageError(
            f"only {checked} kink-free parameter probes available, "
            f"need {n_samples}"
        )
    return worst
