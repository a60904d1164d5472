"""Dissect the decorrelation loss: the two-step standardization, the
cross-correlation matrix, the diagonal/off-diagonal split, and the gradient.

Run with:  python3 demos/03_loss_anatomy.py
"""

import numpy as np
import torch

from swisd.losses import (
    DegenerateDimensionError,
    decorrelation_objective,
    l2_normalize_dims,
    objective_gradient,
    preprocess_embeddings,
    standardize_dims,
    swis_d_loss,
)


def banner(title: str) -> None:
    print(f"\n=== {title} ===")


def main() -> None:
    torch.manual_seed(0)

    banner("1. a two-sample example you can check by hand")
    # One dimension, two samples, both views identical and already standardized.
    z = torch.tensor([[-1.0], [1.0]])
    breakdown = swis_d_loss(z, z)
    print("z = z' = [[-1], [1]]  (mean 0, population std 1)")
    print("C_11 = (-1)(-1) + (1)(1) = 2, so the diagonal term is (2 - 1)^2 = 1")
    print(f"loss = 1 / batch_size = {breakdown.total.item():.4f}")
    print(f"on-diagonal part:  {breakdown.on_diag.item():.4f}")
    print(f"off-diagonal part: {breakdown.off_diag.item():.4f}")

    banner("2. the two normalization steps")
    raw = torch.randn(8, 5) * 3.0 + 1.0
    step1 = l2_normalize_dims(raw)
    norms = step1.pow(2).sum(dim=0).sqrt()
    print(f"after step 1, every column has unit L2 norm: {norms.numpy().round(6)}")
    step2 = standardize_dims(step1)
    print(f"after step 2, column means:         {step2.mean(dim=0).numpy().round(6)}")
    print(f"after step 2, population variances: {step2.var(dim=0, unbiased=False).numpy().round(6)}")
    composed = preprocess_embeddings(raw)  # runs in float64 internally
    print(f"preprocess_embeddings == step2(step1(raw)): "
          f"{torch.allclose(composed, step2.double(), atol=1e-6)}")
    direct = standardize_dims(raw)
    print(f"standardizing alone gives the same result (step 1 is absorbed): "
          f"{torch.allclose(composed, direct.double(), atol=1e-6)}")

    banner("3. the cross-correlation matrix on random views")
    raw_z = torch.randn(16, 4)
    raw_zp = raw_z + 0.3 * torch.randn(16, 4)  # noisy second view
    breakdown, c = decorrelation_objective(raw_z, raw_zp)
    print("C (standardized views, z^T z'):")
    print(np.array2string(c.numpy(), precision=3, suppress_small=True))
    print(f"loss = {breakdown.total.item():.4f} "
          f"(on-diag {breakdown.on_diag.item():.4f}, off-diag {breakdown.off_diag.item():.4f})")
    print("the literal variant drives each C_ii toward 1 and every C_ij (i != j)")
    print("toward 0; the scaled variant rescales C by the batch size first.")

    banner("4. analytic gradient vs finite differences")
    raw_z = torch.randn(6, 3, dtype=torch.float64)
    raw_zp = torch.randn(6, 3, dtype=torch.float64)
    grad_z, _ = objective_gradient(raw_z, raw_zp)
    h = 1e-6

    def loss_at(x: torch.Tensor) -> float:
        bd, _ = decorrelation_objective(x, raw_zp)
        return float(bd.total)

    worst = 0.0
    for i in range(raw_z.shape[0]):
        for j in range(raw_z.shape[1]):
            plus, minus = raw_z.clone(), raw_z.clone()
            plus[i, j] += h
            minus[i, j] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2 * h)
            a = float(grad_z[i, j])
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-12))
    print(f"max relative error over all {raw_z.numel()} coordinates: {worst:.2e}")

    banner("5. degenerate dimensions")
    flat = torch.randn(8, 3)
    flat[:, 1] = 2.5  # a constant column has no scale to divide by
    try:
        preprocess_embeddings(flat)
    except DegenerateDimensionError as exc:
        print(f"eps=0 raises: {exc}")
    guarded = preprocess_embeddings(flat, eps=1e-8)
    print(f"eps=1e-8 keeps going; the dead column becomes all zeros: "
          f"{bool((guarded[:, 1] == 0).all())}")


if __name__ == "__main__":
    main()
