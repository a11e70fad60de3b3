"""Calibrated stochastic augmentation: rotation, shear, and scale.

Each transform fires independently with probability p_x = mu * gamma_x, where
mu is solved so that the expected fraction of untouched images equals the
target p_org:

    p_org = (1 - mu*gamma_rt) * (1 - mu*gamma_sh) * (1 - mu*gamma_sc)

The product is strictly decreasing in mu, so the squared residual is unimodal
and a golden-section search over [0, mu_max] finds the unique root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

GOLDEN_TOL = 1e-9
RESIDUAL_TOL = 1e-6
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class AugmentationFactors:
    gamma_rt: float = 0.4
    gamma_sh: float = 0.3
    gamma_sc: float = 0.3

    def __post_init__(self):
        for name, g in self.as_dict().items():
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {g}")

    def as_dict(self) -> dict[str, float]:
        return {"gamma_rt": self.gamma_rt, "gamma_sh": self.gamma_sh, "gamma_sc": self.gamma_sc}

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma_rt, self.gamma_sh, self.gamma_sc)


@dataclass(frozen=True)
class TransformRanges:
    """Magnitude ranges: rotation in +-degrees, shear in +-ratio, scale interval."""

    rotation_deg: float = 10.0
    shear: float = 0.1
    scale: tuple[float, float] = (0.9, 1.1)


def _untouched_fraction(mu: float, gammas: tuple[float, float, float]) -> float:
    out = 1.0
    for g in gammas:
        out *= 1.0 - mu * g
    return out


def mu_upper_bound(factors: AugmentationFactors) -> float:
    """Largest mu keeping every probability <= 1 (min over nonzero 1/gamma)."""
    nonzero = [g for g in factors.as_tuple() if g > 0.0]
    if not nonzero:
        return 0.0
    return min(1.0 / g for g in nonzero)


def solve_mu(p_org: float, factors: AugmentationFactors, tol: float = GOLDEN_TOL) -> float:
    """Solve the untouched-fraction equation for mu by golden-section search.

    Minimizes the squared residual (f(mu) - p_org)^2 on [0, mu_max] until the
    bracketing interval is below ``tol``. Raises ValueError when p_org lies
    outside (0, 1] or outside the reachable interval [f(mu_max), 1].
    """
    if not 0.0 < p_org <= 1.0:
        raise ValueError(f"p_org must be in (0, 1], got {p_org}")
    gammas = factors.as_tuple()
    if p_org == 1.0:
        return 0.0
    if all(g == 0.0 for g in gammas):
        raise ValueError("all augmentation factors are zero; p_org < 1 is unreachable")
    mu_max = mu_upper_bound(factors)
    lo = _untouched_fraction(mu_max, gammas)
    if not lo <= p_org <= 1.0:
        raise ValueError(f"p_org={p_org} outside reachable interval [{lo:.6g}, 1]")

    def g(mu: float) -> float:
        return (_untouched_fraction(mu, gammas) - p_org) ** 2

    a, b = 0.0, mu_max
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol:
        if gc < gd:
            b, d, gd = d, c, gc
            c = b - _INVPHI * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _INVPHI * (b - a)
            gd = g(d)
    mu = 0.5 * (a + b)
    residual = abs(_untouched_fraction(mu, gammas) - p_org)
    if residual >= RESIDUAL_TOL:
        raise RuntimeError(f"calibration did not converge: residual {residual:.3g}")
    return mu


def probabilities(mu: float, factors: AugmentationFactors) -> tuple[float, float, float]:
    """Per-transform probabilities (p_rt, p_sh, p_sc) = mu * gamma."""
    mu_max = mu_upper_bound(factors)
    if not -1e-12 <= mu <= mu_max + 1e-12:
        raise ValueError(f"mu={mu} outside [0, {mu_max}]")
    return tuple(min(1.0, max(0.0, mu * g)) for g in factors.as_tuple())


@dataclass(frozen=True)
class AugmentationPolicy:
    p_org: float
    mu: float
    p_rt: float
    p_sh: float
    p_sc: float
    ranges: TransformRanges = field(default_factory=TransformRanges)

    def __post_init__(self):
        prod = (1.0 - self.p_rt) * (1.0 - self.p_sh) * (1.0 - self.p_sc)
        if abs(prod - self.p_org) >= RESIDUAL_TOL:
            raise ValueError(
                f"inconsistent policy: untouched product {prod:.8f} != p_org {self.p_org}"
            )


def solve_policy(
    p_org: float = 0.5,
    factors: AugmentationFactors | None = None,
    ranges: TransformRanges | None = None,
) -> AugmentationPolicy:
    """Calibrate a full policy from the target untouched fraction."""
    factors = factors or AugmentationFactors()
    mu = solve_mu(p_org, factors)
    p_rt, p_sh, p_sc = probabilities(mu, factors)
    return AugmentationPolicy(p_org, mu, p_rt, p_sh, p_sc, ranges or TransformRanges())


def identity_policy(ranges: TransformRanges | None = None) -> AugmentationPolicy:
    """Policy that never transforms (p_org = 1, mu = 0)."""
    return AugmentationPolicy(1.0, 0.0, 0.0, 0.0, 0.0, ranges or TransformRanges())


def augment(image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply the policy's transforms to a square grayscale image.

    Three independent Bernoulli decisions are drawn first, then a magnitude
    for each selected transform, in rotate -> shear -> scale order. Selected
    transforms compose in that fixed order about the image center; bilinear
    interpolation, out-of-frame regions filled with background level 1.0.
    Returns a copy of the input when nothing is selected.
    """
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square grayscale image, got shape {image.shape}")
    u = rng.random(3)
    apply_rt = u[0] < policy.p_rt
    apply_sh = u[1] < policy.p_sh
    apply_sc = u[2] < policy.p_sc
    if not (apply_rt or apply_sh or apply_sc):
        return image.copy()

    forward = np.eye(2)
    if apply_rt:
        theta = math.radians(rng.uniform(-policy.ranges.rotation_deg, policy.ranges.rotation_deg))
        c, s = math.cos(theta), math.sin(theta)
        forward = np.array([[c, -s], [s, c]]) @ forward
    if apply_sh:
        sh = rng.uniform(-policy.ranges.shear, policy.ranges.shear)
        forward = np.array([[1.0, 0.0], [sh, 1.0]]) @ forward
    if apply_sc:
        k = rng.uniform(*policy.ranges.scale)
        forward = np.array([[k, 0.0], [0.0, k]]) @ forward

    inverse = np.linalg.inv(forward)
    center = np.array(image.shape, dtype=float) / 2.0 - 0.5
    offset = center - inverse @ center
    return ndimage.affine_transform(
        image, inverse, offset=offset, order=1, mode="constant", cval=1.0,
        output=image.dtype,
    )
