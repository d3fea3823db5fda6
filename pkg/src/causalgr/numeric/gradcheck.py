"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from causalgr.errors import NumericError, ParameterError
from causalgr.numeric.tensor import Tape, Tensor, mul, sum_


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return sum_(out)
    return sum_(mul(out, Tensor(weights)))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    eps: float = 1e-5,
    coords: np.ndarray | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` may be tensor-valued; non-scalar outputs are contracted with a fixed
    random weight tensor so the whole Jacobian participates.  ``coords`` limits
    the comparison to a subset of flat indices of ``x``.

    The error per coordinate is ``|analytic - fd| / max(1, |fd|)``.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    src = x.data if isinstance(x, Tensor) else np.asarray(x)
    base = np.array(src, dtype=np.float32 if src.dtype == np.float32 else np.float64)

    probe = f(Tensor(base))
    weights = None
    if probe.size != 1:
        weights = np.random.default_rng(seed).uniform(-1.0, 1.0, probe.shape).astype(probe.dtype)

    leaf = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        loss = _scalarize(f(leaf), weights)
    grads = tape.backward(loss)
    analytic = grads.get(leaf, np.zeros_like(base)).reshape(-1)

    if coords is None:
        coords = np.arange(base.size)
    flat = base.reshape(-1)
    worst = 0.0
    for i in np.asarray(coords).reshape(-1):
        orig = flat[i]
        flat[i] = orig + eps
        up = _scalarize(f(Tensor(base)), weights).item()
        flat[i] = orig - eps
        down = _scalarize(f(Tensor(base)), weights).item()
        flat[i] = orig
        fd = (up - down) / (2 * eps)
        if not np.isfinite(fd) or not np.isfinite(analytic[i]):
            raise NumericError(f"non-finite gradient at coordinate {i}")
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(fd)))
    return worst
