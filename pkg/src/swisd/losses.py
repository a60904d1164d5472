"""Standardized-decorrelation objective for positive-pair embeddings.

The preprocessing has two stages: Step 1 rescales every embedding dimension to
unit L2 norm over the batch, and Step 2 standardizes each dimension to zero
mean and unit population variance.  The loss then drives the cross-correlation
matrix between the two standardized views toward the identity:

    L = (1/N) * sum_i [ sum_{j != i} C_ij^2 + (C_ii - 1)^2 ],
    C_ij = sum_k z_k^i * z'_k^j.

Everything here is computed in double precision regardless of the model's
parameter dtype, and the reductions are arranged so that swapping the two
views yields a bit-identical loss.
"""

from __future__ import annotations

from typing import NamedTuple

import torch

# Columns whose L2 norm or standard deviation falls at or below this are
# treated as collapsed rather than silently rescaled.
DEGENERATE_TOL = 1e-12

LOSS_VARIANTS = ("literal", "scaled")


class DegenerateDimensionError(ValueError):
    """A feature dimension is constant (or zero) over the batch — a collapse signal."""

    def __init__(self, dims: tuple[int, ...], stage: str):
        self.dims = dims
        self.stage = stage
        shown = ", ".join(str(d) for d in dims[:8])
        if len(dims) > 8:
            shown += ", ..."
        super().__init__(f"{stage}: degenerate feature dimensions [{shown}] ({len(dims)} total)")


class LossBreakdown(NamedTuple):
    """Total loss plus its on-/off-diagonal decomposition (all 0-dim tensors)."""

    total: torch.Tensor
    on_diag: torch.Tensor
    off_diag: torch.Tensor


def _as_batch_matrix(z: torch.Tensor | object, name: str = "z") -> torch.Tensor:
    t = torch.as_tensor(z)
    if t.ndim != 2:
        raise ValueError(f"{name} must be an NxD matrix, got shape {tuple(t.shape)}")
    if t.shape[0] < 2:
        raise ValueError(f"{name} needs a batch of at least 2 samples, got N={t.shape[0]}")
    return t


def _flag_degenerate(scales: torch.Tensor, stage: str) -> None:
    bad = (scales <= DEGENERATE_TOL).nonzero(as_tuple=True)[0]
    if bad.numel():
        raise DegenerateDimensionError(tuple(int(i) for i in bad.tolist()), stage)


def l2_normalize_dims(z: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Step 1: divide each feature dimension by its L2 norm over the batch.

    With ``eps == 0`` a (near-)zero column raises
    :class:`DegenerateDimensionError`; a positive ``eps`` is added inside the
    square root instead, for training-time robustness.
    """
    z = _as_batch_matrix(z)
    sumsq = (z * z).sum(dim=0)
    if eps > 0:
        return z / torch.sqrt(sumsq + eps)
    norms = torch.sqrt(sumsq)
    _flag_degenerate(norms, "batch L2 normalization")
    return z / norms


def standardize_dims(z: torch.Tensor, eps: float = 0.0, unbiased: bool = False) -> torch.Tensor:
    """Step 2: per dimension, subtract the batch mean and divide by the batch std.

    The denominator uses the population (1/N) standard deviation by default;
    ``unbiased=True`` switches to 1/(N-1).  Constant columns raise unless a
    positive ``eps`` is supplied.
    """
    z = _as_batch_matrix(z)
    n = z.shape[0]
    centered = z - z.mean(dim=0)
    denom = (n - 1) if unbiased else n
    var = (centered * centered).sum(dim=0) / denom
    if eps > 0:
        return centered / torch.sqrt(var + eps)
    std = torch.sqrt(var)
    _flag_degenerate(std, "standardization")
    return centered / std


def preprocess_embeddings(
    z: torch.Tensor, eps: float = 0.0, unbiased: bool = False
) -> torch.Tensor:
    """Steps 1 and 2 in sequence, in double precision."""
    z = _as_batch_matrix(z).double()
    return standardize_dims(l2_normalize_dims(z, eps=eps), eps=eps, unbiased=unbiased)


def cross_correlation(z: torch.Tensor, zp: torch.Tensor) -> torch.Tensor:
    """C_ij = sum_k z_k^i * z'_k^j, computed in double precision."""
    z = _as_batch_matrix(z, "z")
    zp = _as_batch_matrix(zp, "z'")
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {tuple(z.shape)} vs {tuple(zp.shape)}")
    return z.double().T @ zp.double()


def swis_d_loss(
    z: torch.Tensor, zp: torch.Tensor, variant: str = "literal"
) -> LossBreakdown:
    """Decorrelation loss between two preprocessed positive-pair views.

    ``variant='literal'`` evaluates the loss exactly as written, where the
    diagonal target 1 corresponds to a cross-view correlation of 1/N after
    standardization.  ``variant='scaled'`` divides C by N first, so the
    diagonal target is correlation 1 (Barlow-Twins-like behavior).

    The off-diagonal sum is accumulated over unordered index pairs so that
    ``swis_d_loss(z, zp)`` and ``swis_d_loss(zp, z)`` agree bit for bit.
    """
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}; expected one of {LOSS_VARIANTS}")
    z = _as_batch_matrix(z, "z").double()
    zp = _as_batch_matrix(zp, "z'").double()
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {tuple(z.shape)} vs {tuple(zp.shape)}")
    if not (torch.isfinite(z).all() and torch.isfinite(zp).all()):
        raise ValueError("non-finite values in loss inputs")

    n = z.shape[0]
    c_fwd = z.T @ zp
    c_rev = zp.T @ z  # equals c_fwd.T exactly in real arithmetic
    if variant == "scaled":
        c_fwd = c_fwd / n
        c_rev = c_rev / n

    # Average the two evaluations of each C_ij^2 and fold (i,j) with (j,i)
    # before reducing: both operations commute bitwise under a view swap.
    sq = (c_fwd * c_fwd + (c_rev * c_rev).T) / 2
    folded = sq + sq.T
    off_diag = torch.triu(folded, diagonal=1).sum() / n

    d_fwd = torch.diagonal(c_fwd)
    d_rev = torch.diagonal(c_rev)
    on_diag = (((d_fwd - 1) ** 2 + (d_rev - 1) ** 2) / 2).sum() / n

    return LossBreakdown(total=on_diag + off_diag, on_diag=on_diag, off_diag=off_diag)


def decorrelation_objective(
    raw_z: torch.Tensor,
    raw_zp: torch.Tensor,
    variant: str = "literal",
    eps: float = 0.0,
    unbiased: bool = False,
) -> tuple[LossBreakdown, torch.Tensor]:
    """Full objective on raw embeddings: Steps 1-2 on each view, then the loss.

    Also returns the (detached, unscaled) cross-correlation matrix of the
    standardized views for diagnostics.
    """
    z = preprocess_embeddings(raw_z, eps=eps, unbiased=unbiased)
    zp = preprocess_embeddings(raw_zp, eps=eps, unbiased=unbiased)
    breakdown = swis_d_loss(z, zp, variant=variant)
    with torch.no_grad():
        c = z.T @ zp
    return breakdown, c.detach()


def objective_gradient(
    raw_z: torch.Tensor,
    raw_zp: torch.Tensor,
    variant: str = "literal",
    eps: float = 0.0,
    unbiased: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gradient of the full objective w.r.t. both raw views (double precision)."""
    z = torch.as_tensor(raw_z).detach().double().requires_grad_(True)
    zp = torch.as_tensor(raw_zp).detach().double().requires_grad_(True)
    breakdown, _ = decorrelation_objective(z, zp, variant=variant, eps=eps, unbiased=unbiased)
    gz, gzp = torch.autograd.grad(breakdown.total, (z, zp))
    return gz, gzp
