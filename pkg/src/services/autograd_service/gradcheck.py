"""
Finite-difference verification of backward-pass gradients
"""
import torch

from src.shared.exceptions import NonFinite


def grad_check(fn, point, h=1e-5):
    """
    Compare the autograd gradient of a scalar function with central differences.

    Runs in binary64. Returns max_i |g_i - g^_i| / max(1e-12, |g_i| + |g^_i|).
    """
    x = point.detach().to(torch.float64).clone().requires_grad_(True)
    value = fn(x)
    if not torch.isfinite(value).all():
        raise NonFinite('Function value is not finite at the check point')
    if value.requires_grad:
        (analytic,) = torch.autograd.grad(value, x, allow_unused=True)
        if analytic is None:
            analytic = torch.zeros_like(x)
    else:
        analytic = torch.zeros_like(x)

    numeric = torch.zeros_like(x)
    flat = numeric.view(-1)
    base = x.detach().clone()
    probe = base.view(-1)
    with torch.no_grad():
        for i in range(probe.numel()):
            original = probe[i].item()
            probe[i] = original + h
            upper = fn(base)
            probe[i] = original - h
            lower = fn(base)
            probe[i] = original
            if not (torch.isfinite(upper).all() and torch.isfinite(lower).all()):
                raise NonFinite(f"Function is not finite near coordinate {i}")
            flat[i] = (upper - lower).item() / (2 * h)

    error = (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=1e-12)
    return float(error.max()) if error.numel() else 0.0
