"""Adam updates over a ModelState's parameter dictionary."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError

DEFAULT_LR = 0.001
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-7


def adam_step(
    model,
    grads: dict[str, np.ndarray],
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
):
    """One bias-corrected Adam update, in place.

        m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
        theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    Batch-norm running statistics are not touched here; they update during
    train-mode forwards.  Returns the (mutated) model with step incremented.

    Raises:
        UsageError: gradient keys or shapes do not match the parameters.
    """
    if set(grads) != set(model.params):
        missing = set(model.params) ^ set(grads)
        raise UsageError(f"gradient keys do not match parameters: {sorted(missing)}")
    for name, g in grads.items():
        if g.shape != model.params[name].shape:
            raise UsageError(
                f"{name}: gradient shape {g.shape} != parameter shape "
                f"{model.params[name].shape}"
            )

    model.step += 1
    t = model.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        g = g.astype(model.params[name].dtype, copy=False)
        m = model.adam_m[name]
        v = model.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        model.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return model
