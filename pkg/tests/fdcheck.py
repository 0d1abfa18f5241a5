"""Finite-difference gradient checking shared by the op and model tests.

Central differences with h = 1e-5 on float64 give roughly 1e-9 truncation
error, so a relative tolerance of 1e-4 has orders of magnitude of slack
for a correct gradient while catching any wrong backward rule.
"""

from __future__ import annotations

import numpy as np

from hypevents.tensor import Tape, backward


def numeric_grad(build_loss, tensor, indices=None, h: float = 1e-5) -> dict:
    """Central-difference d(loss)/d(tensor[idx]) for the given flat indices.

    build_loss() must recompute the loss from current tensor data and be
    deterministic between calls.
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = {}
    for idx in indices:
        keep = flat[idx]
        flat[idx] = keep + h
        up = float(build_loss().data)
        flat[idx] = keep - h
        down = float(build_loss().data)
        flat[idx] = keep
        out[idx] = (up - down) / (2.0 * h)
    return out


def assert_grads_match(build_loss, tensors, n_samples: int = 8,
                       rtol: float = 1e-4, floor: float = 1e-3, seed: int = 0):
    """Check analytic grads of build_loss against finite differences.

    tensors is a dict name -> Tensor of leaves to check.  For each leaf a
    few flat components are sampled; the relative error uses a small
    denominator floor so near-zero gradients compare absolutely.
    """
    for t in tensors.values():
        t.grad = None
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape)
    rng = np.random.default_rng(seed)
    for name, t in tensors.items():
        assert t.grad is not None, f"{name}: no gradient reached this leaf"
        size = t.data.size
        k = min(n_samples, size)
        indices = rng.choice(size, size=k, replace=False)
        numeric = numeric_grad(build_loss, t, indices)
        analytic = t.grad.reshape(-1)
        for idx, fd in numeric.items():
            a = analytic[idx]
            denom = max(abs(a), abs(fd), floor)
            err = abs(a - fd) / denom
            assert err < rtol, (
                f"{name}[{idx}]: analytic {a:.8g} vs numeric {fd:.8g} (rel {err:.2e})")
