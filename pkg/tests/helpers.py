import numpy as np
import torch


def central_difference(f, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Numerical gradient of scalar f() with respect to tensor x (perturbed in place).

    The default step is near the cube root of float64 epsilon, which balances truncation
    against round-off for central differences.
    """
    grad = torch.zeros_like(x)
    flat = x.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(f())
        flat[i] = orig - eps
        lo = float(f())
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-5) -> float:
    # gradients that are identically zero (e.g. key biases under softmax) only carry round-off noise
    return float((a - b).norm() / max(a.norm(), b.norm(), floor))


def check_param_grads(module: torch.nn.Module, loss_fn, tol: float = 1e-4, eps: float = 1e-5):
    """Autograd vs central differences for every parameter of ``module``; returns worst relative error."""
    module.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for name, p in module.named_parameters():
        analytic = p.grad.detach().clone()
        with torch.no_grad():
            numeric = central_difference(loss_fn, p, eps)
        err = relative_error(analytic, numeric)
        assert err < tol, f"{name}: relative error {err:.2e}"
        worst = max(worst, err)
    return worst


def binomial_ci99(p: float, n: int) -> tuple:
    half = 2.576 * np.sqrt(p * (1 - p) / n)
    return p - half, p + half
