"""Central finite-difference verification of recorded gradients.

The checker only ever calls the forward function, so it is independent of
the tape it is checking.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, backward, no_grad

__all__ = ["finite_difference_grad", "check_gradients", "GradCheckFailure"]


class GradCheckFailure(AssertionError):
    pass


def finite_difference_grad(f, store: ParamStore, name: str, eps: float = 1e-5) -> np.ndarray:
    """d f / d store[name] by central differences, one coordinate at a time."""
    param = store[name]
    flat = param.data.ravel()
    grad = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(param.data.shape)


def check_gradients(
    f,
    store: ParamStore,
    names=None,
    eps: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
) -> dict:
    """Compare taped gradients of the scalar `f()` against central differences.

    A coordinate passes when |analytic - numeric| <= abs_floor
    + rel_tol * max(|analytic|, |numeric|).  Returns the worst relative
    error per parameter; raises GradCheckFailure naming the first offender.
    """
    loss = f()
    backward(loss, store)
    analytic = {k: t.grad.copy() for k, t in store.items()}

    worst = {}
    for name in names if names is not None else store.names():
        a = analytic[name]
        n = finite_difference_grad(f, store, name, eps=eps)
        err = np.abs(a - n)
        bound = abs_floor + rel_tol * np.maximum(np.abs(a), np.abs(n))
        worst[name] = float((err / np.maximum(bound, 1e-300)).max())
        if np.any(err > bound):
            i = np.unravel_index(int((err - bound).argmax()), a.shape)
            raise GradCheckFailure(
                f"gradient mismatch for {name}{list(i)}: "
                f"analytic={a[i]:.8g} numeric={n[i]:.8g} (eps={eps})"
            )
    return worst
