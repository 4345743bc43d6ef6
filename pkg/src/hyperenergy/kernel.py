"""Learnable adaptive kernel: a sigmoid-weighted mix of a polynomial and an RBF
kernel evaluated against trainable reference points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MODES = (
    "learnable",
    "traditional_poly",
    "traditional_rbf",
    "traditional_combined",
    "learnable_poly_only",
    "learnable_rbf_only",
)


@dataclass
class KernelParams:
    reference_points: Tensor
    alpha: Tensor
    c: Tensor
    lambda_logit: Tensor
    degree: int = 2
    gamma: float = 1.0
    mode: str = "learnable"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if self.reference_points.ndim != 2:
            raise ValueError("reference_points must be a 2-D tensor")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def num_points(self) -> int:
        return self.reference_points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.reference_points.shape[1]

    @property
    def uses_poly(self) -> bool:
        return self.mode not in ("traditional_rbf", "learnable_rbf_only")

    @property
    def uses_rbf(self) -> bool:
        return self.mode not in ("traditional_poly", "learnable_poly_only")

    @property
    def is_traditional(self) -> bool:
        return self.mode.startswith("traditional")

    @property
    def lam(self) -> float:
        return float(ad._sigmoid(self.lambda_logit.data))

    def trainable(self) -> dict[str, Tensor]:
        """Trainable tensors, keyed by name. Empty in traditional modes."""
        if self.is_traditional:
            return {}
        out = {"kernel.reference_points": self.reference_points}
        if self.uses_poly:
            out["kernel.alpha"] = self.alpha
            out["kernel.c"] = self.c
        if self.mode == "learnable":
            out["kernel.lambda_logit"] = self.lambda_logit
        return out

    def tensors(self) -> dict[str, Tensor]:
        return {
            "kernel.reference_points": self.reference_points,
            "kernel.alpha": self.alpha,
            "kernel.c": self.c,
            "kernel.lambda_logit": self.lambda_logit,
        }


def init_reference_points(num_points: int, num_features: int, window: int,
                          seed: int | np.random.Generator) -> Tensor:
    """Standard-normal reference points of shape ``[num_points, num_features * window]``."""
    if num_points < 1 or num_features < 1 or window < 1:
        raise ValueError("num_points, num_features and window must all be >= 1")
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((num_points, num_features * window)), requires_grad=True)


def make_kernel(num_points: int, num_features: int, window: int, *, degree: int = 2,
                gamma: float = 1.0, mode: str = "learnable", seed=0,
                train_inputs: np.ndarray | None = None) -> KernelParams:
    """Build kernel parameters for ``mode``.

    Traditional modes draw frozen reference points from rows of
    ``train_inputs`` (flattened windows) and fix alpha = c = 1, lambda = 0.5.
    """
    if mode not in MODES:
        raise ValueError(f"unknown kernel mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode.startswith("traditional"):
        if train_inputs is None:
            raise ValueError("traditional kernels need training inputs to draw reference points")
        flat = np.asarray(train_inputs, dtype=float).reshape(len(train_inputs), -1)
        if flat.shape[1] != num_features * window:
            raise ValueError(f"training inputs have width {flat.shape[1]}, expected {num_features * window}")
        rows = rng.choice(len(flat), size=num_points, replace=len(flat) < num_points)
        refs = Tensor(flat[rows].copy())
    else:
        refs = init_reference_points(num_points, num_features, window, rng)
    trainable = not mode.startswith("traditional")
    poly = mode not in ("traditional_rbf", "learnable_rbf_only")
    params = KernelParams(
        reference_points=refs,
        alpha=Tensor(1.0, requires_grad=trainable and poly),
        c=Tensor(1.0, requires_grad=trainable and poly),
        lambda_logit=Tensor(0.0, requires_grad=(mode == "learnable")),
        degree=degree,
        gamma=gamma,
        mode=mode,
    )
    refs.requires_grad = trainable
    return params


def _check_width(x: Tensor, params: KernelParams) -> None:
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ad.ShapeError(f"kernel input {x.shape} does not match reference width {params.input_dim}")


def poly_kernel(x: Tensor, params: KernelParams) -> Tensor:
    """``(alpha * <x_i, r_j> + c) ** degree`` for every pair."""
    _check_width(x, params)
    inner = ad.matmul(x, ad.transpose(params.reference_points))
    return ad.pow_int(ad.add(ad.mul(inner, params.alpha), params.c), params.degree)


def rbf_kernel(x: Tensor, params: KernelParams) -> Tensor:
    """``exp(-gamma * ||x_i - r_j||^2)`` for every pair."""
    _check_width(x, params)
    if not params.gamma > 0:
        raise ValueError(f"gamma must be positive, got {params.gamma}")
    return ad.exp(ad.scalar_mul(ad.pairwise_sq_dist(x, params.reference_points), -params.gamma))


def mix(k_poly: Tensor, k_rbf: Tensor, lam: Tensor) -> Tensor:
    """``lam * k_poly + (1 - lam) * k_rbf`` for a scalar tensor ``lam``."""
    return ad.add(ad.mul(k_poly, lam), ad.mul(k_rbf, ad.sub(1.0, lam)))


def adaptive_kernel_forward(x: Tensor, params: KernelParams) -> Tensor:
    if params.mode in ("traditional_poly", "learnable_poly_only"):
        return poly_kernel(x, params)
    if params.mode in ("traditional_rbf", "learnable_rbf_only"):
        return rbf_kernel(x, params)
    lam = ad.sigmoid(params.lambda_logit)
    return mix(poly_kernel(x, params), rbf_kernel(x, params), lam)
