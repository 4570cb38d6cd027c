import torch


def relative_gradient_error(loss_fn, x: torch.Tensor, eps: float = 1e-6) -> float:
    """Norm-wise relative error between autograd and central differences."""
    x = x.detach().clone().requires_grad_(True)
    loss_fn(x).backward()
    analytic = x.grad.detach()
    numeric = torch.zeros_like(analytic)
    base = x.detach()
    with torch.no_grad():
        for i in range(base.numel()):
            plus, minus = base.clone(), base.clone()
            plus.view(-1)[i] += eps
            minus.view(-1)[i] -= eps
            numeric.view(-1)[i] = (loss_fn(plus) - loss_fn(minus)) / (2 * eps)
    scale = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / scale


def away_from_kink(target: torch.Tensor) -> torch.Tensor:
    # residuals of magnitude in [0.1, 0.5] with random sign
    offset = (torch.rand_like(target) * 0.4 + 0.1) * torch.sign(torch.randn_like(target))
    return target + offset
