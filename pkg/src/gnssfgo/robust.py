"""Robust M-estimator kernels applied to whitened factor residuals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_HUBER_K = 1.345


class KernelKind(enum.Enum):
    NONE = "none"
    HUBER = "huber"


@dataclass(frozen=True)
class RobustKernel:
    """Robust loss attached to a factor.

    ``k`` is the Huber threshold in whitened-residual units (unitless
    after division by sigma).
    """

    kind: KernelKind = KernelKind.NONE
    k: float = DEFAULT_HUBER_K

    def __post_init__(self):
        if self.kind is KernelKind.HUBER and not self.k > 0:
            raise ValueError(f"Huber threshold must be positive, got {self.k}")

    @staticmethod
    def none() -> "RobustKernel":
        return RobustKernel(KernelKind.NONE)

    @staticmethod
    def huber(k: float = DEFAULT_HUBER_K) -> "RobustKernel":
        return RobustKernel(KernelKind.HUBER, k)


def huber_weight(r: float, k: float) -> float:
    """IRLS weight for a whitened residual magnitude.

    Returns 1 inside the threshold and k/|r| outside, so weight*r is
    continuous at |r| = k.
    """
    if not k > 0:
        raise ValueError(f"Huber threshold must be positive, got {k}")
    a = abs(r)
    if a <= k:
        return 1.0
    return k / a


def huber_cost(sq: float, k: float) -> float:
    """Huber loss as a function of the squared whitened residual norm."""
    r = math.sqrt(sq)
    if r <= k:
        return sq
    return 2.0 * k * r - k * k


# Integer codes used by the packed-graph kernels.
KERNEL_CODE_NONE = 0
KERNEL_CODE_HUBER = 1


def kernel_code(kernel: RobustKernel | None) -> tuple[int, float]:
    if kernel is None or kernel.kind is KernelKind.NONE:
        return KERNEL_CODE_NONE, 0.0
    return KERNEL_CODE_HUBER, kernel.k


def costs_from_squares(sq: np.ndarray, codes: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Vectorized kernel loss per factor from squared residual norms."""
    out = sq.copy()
    hub = codes == KERNEL_CODE_HUBER
    if np.any(hub):
        r = np.sqrt(sq[hub])
        k = ks[hub]
        big = r > k
        loss = sq[hub].copy()
        loss[big] = 2.0 * k[big] * r[big] - k[big] ** 2
        out[hub] = loss
    return out


def weights_from_squares(sq: np.ndarray, codes: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Vectorized IRLS weights per factor from squared residual norms."""
    w = np.ones_like(sq)
    hub = codes == KERNEL_CODE_HUBER
    if np.any(hub):
        r = np.sqrt(sq[hub])
        k = ks[hub]
        wf = np.ones_like(r)
        big = r > k
        wf[big] = k[big] / r[big]
        w[hub] = wf
    return w
