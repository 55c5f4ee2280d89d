"""Shared test utilities: finite-difference gradient oracle and constructions."""

import numpy as np

from csil.engine import Tensor


def gradcheck(build_loss, params, eps=1e-5, rtol=1e-4, atol=1e-8):
    """Compare analytic gradients against central finite differences.

    `build_loss` must rebuild the graph from the same parameter tensors on
    every call. Returns the worst relative error seen; raises AssertionError
    with the offending parameter/index if any entry disagrees.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = build_loss().item()
            flat[i] = orig - eps
            lm = build_loss().item()
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            g = analytic[pi].reshape(-1)[i]
            denom = max(abs(fd), abs(g))
            err = abs(fd - g) / denom if denom > atol else abs(fd - g)
            assert abs(fd - g) <= rtol * denom + atol, (
                f"param {pi} index {i}: analytic {g!r} vs finite-diff {fd!r} "
                f"(rel err {err:.2e})")
            worst = max(worst, err)
    return worst


def zero_sum_unit_vectors(n: int, dim: int | None = None) -> np.ndarray:
    """n unit vectors that sum to the zero vector (scaled simplex vertices)."""
    if dim is None:
        dim = n
    assert dim >= n - 1
    base = np.eye(n) - 1.0 / n
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    out = np.zeros((n, dim))
    out[:, :n] = base
    return out


def random_tensor(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)
