"""Central-finite-difference verification of autograd gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, no_grad


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autograd and central differences at ``x``.

    ``f`` must map a tensor to a scalar tensor and be deterministic. Runs in
    64-bit only; the comparison uses an absolute floor of 1e-8 so near-zero
    gradients compare absolutely.
    """
    if x.data.dtype != np.float64:
        raise ContractError("finite_diff_check requires a float64 input tensor")
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("finite_diff_check: f must return a scalar tensor")
    out.backward()
    if x.grad is None:
        raise ContractError("finite_diff_check: f does not depend on x")
    autograd = x.grad.copy()

    flat = x.data.reshape(-1)
    fd = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            h = eps * max(1.0, abs(original))
            flat[i] = original + h
            hi = f(x).item()
            flat[i] = original - h
            lo = f(x).item()
            flat[i] = original
            fd[i] = (hi - lo) / (2.0 * h)
    fd = fd.reshape(x.shape)
    diff = np.abs(fd - autograd)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(autograd)), 1e-8)
    # absolute floor: discrepancies below 1e-8 are indistinguishable from
    # central-difference rounding noise and count as exact agreement
    rel = np.where(diff < 1e-8, 0.0, diff / denom)
    return float(np.max(rel))
