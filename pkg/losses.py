"""Conditional-mean BCE, direct and indirect uplift losses, and their alpha blends.

Every loss is a mean over rows, so alpha means the same thing for any batch
size. Gradient helpers return dLoss/dmu1 and dLoss/dmu0 per row; the model
module chains them through both twin passes.
"""

from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from data import UpliftDataset, transform_outcome
from exceptions import UnsupportedPropensityError
from numerics import EPSILON, Vector, check_same_length, clamp

if TYPE_CHECKING:
    from model import TwinOutput

PROPENSITY_TOLERANCE = 0.02


class LossVariant(StrEnum):
    """Uplift term of the composite objective."""

    TO = "TO"  # squared error against the transformed outcome
    IE = "IE"  # treatment-proportion cross-entropy
    L1 = "L1"  # absolute error against the transformed outcome


@dataclass(frozen=True)
class CompositeSpec:
    variant: LossVariant
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "variant", LossVariant(self.variant))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def alpha_from_lambda(lam: float) -> float:
    """Blend weight for a penalised objective J + lambda*L."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return 1.0 / (1.0 + lam)


def lambda_from_alpha(alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return (1.0 - alpha) / alpha


def bce_loss(muT: Vector, y: Vector) -> float:
    check_same_length("bce_loss", muT, y)
    mu = clamp(muT, EPSILON, 1.0 - EPSILON)
    return float(-np.mean(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))


def bce_grad(muT: Vector, y: Vector) -> Vector:
    """dL/dmuT per row."""
    n = check_same_length("bce_grad", muT, y)
    mu = clamp(muT, EPSILON, 1.0 - EPSILON)
    return (-(y / mu) + (1.0 - y) / (1.0 - mu)) / n


def direct_uplift_loss(mu1: Vector, mu0: Vector, z: Vector) -> float:
    check_same_length("direct_uplift_loss", mu1, mu0, z)
    return float(np.mean((z - (mu1 - mu0)) ** 2))


def direct_uplift_grad(mu1: Vector, mu0: Vector, z: Vector) -> tuple[Vector, Vector]:
    n = check_same_length("direct_uplift_grad", mu1, mu0, z)
    residual = z - (mu1 - mu0)
    return -2.0 * residual / n, 2.0 * residual / n


def l1_uplift_loss(mu1: Vector, mu0: Vector, z: Vector) -> float:
    check_same_length("l1_uplift_loss", mu1, mu0, z)
    return float(np.mean(np.abs(z - (mu1 - mu0))))


def l1_uplift_grad(mu1: Vector, mu0: Vector, z: Vector) -> tuple[Vector, Vector]:
    n = check_same_length("l1_uplift_grad", mu1, mu0, z)
    sign = np.sign(z - (mu1 - mu0))
    return -sign / n, sign / n


def pi_transform(mu1: Vector, mu0: Vector) -> tuple[Vector, Vector]:
    """Share of treated rows among positive (pi1) and negative (pi0) responders."""
    check_same_length("pi_transform", mu1, mu0)
    pi1 = mu1 / (mu0 + mu1)
    pi0 = (1.0 - mu1) / ((1.0 - mu0) + (1.0 - mu1))
    return pi1, pi0


def check_indirect_propensity(propensity: float) -> None:
    if abs(propensity - 0.5) > PROPENSITY_TOLERANCE:
        raise UnsupportedPropensityError(propensity)


def indirect_uplift_loss(
    pi1: Vector, pi0: Vector, t: Vector, y: Vector, propensity: float = 0.5
) -> float:
    """Cross-entropy between Pi_y and the treatment flag; needs propensity 1/2."""
    check_indirect_propensity(propensity)
    check_same_length("indirect_uplift_loss", pi1, pi0, t, y)
    pi_y = clamp(y * pi1 + (1.0 - y) * pi0, EPSILON, 1.0 - EPSILON)
    return float(-np.mean(t * np.log(pi_y) + (1.0 - t) * np.log(1.0 - pi_y)))


def indirect_uplift_grad(mu1: Vector, mu0: Vector, t: Vector, y: Vector) -> tuple[Vector, Vector]:
    n = check_same_length("indirect_uplift_grad", mu1, mu0, t, y)
    pi1, pi0 = pi_transform(mu1, mu0)
    pi_y = clamp(y * pi1 + (1.0 - y) * pi0, EPSILON, 1.0 - EPSILON)
    grad_pi = (-(t / pi_y) + (1.0 - t) / (1.0 - pi_y)) / n

    positive = (mu0 + mu1) ** 2
    negative = ((1.0 - mu0) + (1.0 - mu1)) ** 2
    dpi1_dmu1, dpi1_dmu0 = mu0 / positive, -mu1 / positive
    dpi0_dmu1, dpi0_dmu0 = -(1.0 - mu0) / negative, (1.0 - mu1) / negative

    grad_pi1 = grad_pi * y
    grad_pi0 = grad_pi * (1.0 - y)
    return (
        grad_pi1 * dpi1_dmu1 + grad_pi0 * dpi0_dmu1,
        grad_pi1 * dpi1_dmu0 + grad_pi0 * dpi0_dmu0,
    )


def uplift_term(spec: CompositeSpec, outputs: "TwinOutput", batch: UpliftDataset) -> float:
    """The uplift half of the blend (J, I or the L1 variant)."""
    if spec.variant is LossVariant.IE:
        pi1, pi0 = pi_transform(outputs.mu1, outputs.mu0)
        return indirect_uplift_loss(pi1, pi0, batch.treatment, batch.outcome, batch.propensity)
    z = transform_outcome(batch)
    if spec.variant is LossVariant.L1:
        return l1_uplift_loss(outputs.mu1, outputs.mu0, z)
    return direct_uplift_loss(outputs.mu1, outputs.mu0, z)


def composite(spec: CompositeSpec, outputs: "TwinOutput", batch: UpliftDataset) -> float:
    """(1 - alpha) * uplift term + alpha * BCE."""
    uplift = uplift_term(spec, outputs, batch) if spec.alpha < 1.0 else 0.0
    bce = bce_loss(outputs.muT, batch.outcome) if spec.alpha > 0.0 else 0.0
    return (1.0 - spec.alpha) * uplift + spec.alpha * bce


def composite_gradient(
    spec: CompositeSpec, outputs: "TwinOutput", batch: UpliftDataset
) -> tuple[Vector, Vector]:
    """d composite / d mu1 and d composite / d mu0 per row."""
    t, y = batch.treatment, batch.outcome
    grad_mu1 = np.zeros_like(outputs.mu1)
    grad_mu0 = np.zeros_like(outputs.mu0)
    if spec.alpha < 1.0:
        if spec.variant is LossVariant.IE:
            check_indirect_propensity(batch.propensity)
            u1, u0 = indirect_uplift_grad(outputs.mu1, outputs.mu0, t, y)
        elif spec.variant is LossVariant.L1:
            u1, u0 = l1_uplift_grad(outputs.mu1, outputs.mu0, transform_outcome(batch))
        else:
            u1, u0 = direct_uplift_grad(outputs.mu1, outputs.mu0, transform_outcome(batch))
        grad_mu1 += (1.0 - spec.alpha) * u1
        grad_mu0 += (1.0 - spec.alpha) * u0
    if spec.alpha > 0.0:
        grad_muT = bce_grad(outputs.muT, y)
        grad_mu1 += spec.alpha * t * grad_muT
        grad_mu0 += spec.alpha * (1.0 - t) * grad_muT
    return grad_mu1, grad_mu0
