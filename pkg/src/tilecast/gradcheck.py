"""Central finite-difference gradient checking for differentiable operations.

Every network in this package is checked by comparing its backward-pass
gradients against a two-sided difference quotient computed purely from forward
evaluations at 64-bit precision.  The closure interface keeps the oracle
independent of how the loss is implemented.
"""

from __future__ import annotations

from typing import Callable

import torch

__all__ = ["finite_difference_gradients", "max_relative_gradient_error", "assert_gradients_close"]


def finite_difference_gradients(loss_fn: Callable[[], torch.Tensor],
                                params: list[torch.Tensor],
                                eps: float = 1e-6) -> list[torch.Tensor]:
    """Central differences of a scalar loss w.r.t. each parameter tensor.

    `loss_fn` must re-evaluate the loss from the current parameter values; the
    parameters are perturbed in place, one element at a time.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2.0 * eps)
            grads.append(g)
    return grads


def max_relative_gradient_error(loss_fn: Callable[[], torch.Tensor],
                                params: list[torch.Tensor],
                                eps: float = 1e-6) -> float:
    """Relative error between autograd and finite differences.

    All parameter gradients are flattened into one vector and compared as
    ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||), so structurally-zero
    gradient entries (where central differences only see rounding noise) do
    not blow up the metric while any real deviation still dominates it.
    """
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("gradient checks must run at 64-bit precision")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    auto = torch.cat([
        (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in params
    ])
    numeric = torch.cat([
        g.reshape(-1) for g in finite_difference_gradients(loss_fn, params, eps)
    ])
    denom = max(float(auto.norm()), float(numeric.norm()), 1e-12)
    return float((auto - numeric).norm()) / denom


def assert_gradients_close(loss_fn: Callable[[], torch.Tensor],
                           params: list[torch.Tensor],
                           rtol: float = 1e-4, eps: float = 1e-6) -> float:
    err = max_relative_gradient_error(loss_fn, params, eps)
    if err >= rtol:
        raise AssertionError(f"gradient mismatch: relative error {err:.3e} >= {rtol}")
    return err
