"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor


class NondeterministicLossError(RuntimeError):
    pass


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-6,
               coords_per_block: int = 64, seed: int = 0) -> float:
    """Largest relative error between analytic and finite-difference gradients.

    ``loss_fn`` takes no arguments and reads the current values of ``params``.
    Blocks with more than ``coords_per_block`` entries are subsampled. The
    relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    base = float(loss.data)
    if float(loss_fn().data) != base:
        raise NondeterministicLossError("loss_fn returned different values for identical inputs")
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= coords_per_block else rng.choice(n, coords_per_block, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params.values():
        p.grad = None
    return worst
