"""Differentially private sketch release.

The unnormalised sum of clipped projections gets Gaussian noise calibrated
with the analytic Gaussian mechanism; the count optionally gets Laplace
noise. The noisy ratio is then clamped, which is post-processing and keeps
the guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import CalibrationError, DomainError, EmptyDataset
from .rng import make_rng
from .sketch import MEAN, DPInfo, FeatureMap, RffMap, Sketch

__all__ = [
    "PrivacyBudget",
    "ClipSpec",
    "estimate_sensitivity",
    "clip_projection",
    "classical_gaussian_sigma",
    "calibrate_gaussian_sigma",
    "privatize_sketch",
    "private_sketch",
    "clamp_bounds",
    "generalization_bound",
]


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon1: float
    epsilon2: float
    delta: float

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise CalibrationError("epsilon1 must be positive")
        if not self.epsilon2 >= 0:
            raise CalibrationError("epsilon2 must be non-negative")
        if not 0 < self.delta < 1:
            raise CalibrationError("delta must lie in (0, 1)")

    @classmethod
    def split(cls, epsilon: float, delta: float, gaussian_share: float = 0.9) -> "PrivacyBudget":
        """Divide a total epsilon between the sum (Gaussian) and the count (Laplace)."""
        return cls(epsilon * gaussian_share, epsilon * (1.0 - gaussian_share), delta)

    @property
    def epsilon(self) -> float:
        return self.epsilon1 + self.epsilon2


@dataclass(frozen=True)
class ClipSpec:
    S: float
    z_min: float | np.ndarray = -np.inf
    z_max: float | np.ndarray = np.inf

    def __post_init__(self):
        if not self.S > 0:
            raise CalibrationError("sensitivity S must be positive")
        if np.any(np.asarray(self.z_min) > np.asarray(self.z_max)):
            raise CalibrationError("z_min must not exceed z_max")


def estimate_sensitivity(fmap: FeatureMap, calibration_data) -> float:
    """Largest projection norm over the calibration set.

    Use training data only; looking at evaluation data here leaks it.
    """
    X = np.asarray(calibration_data, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("sensitivity needs at least one calibration sample")
    S = float(np.max(np.linalg.norm(fmap.apply(X), axis=1)))
    if isinstance(fmap, RffMap):
        S = min(S, fmap.norm_bound())
    return S


def clip_projection(v, S: float) -> np.ndarray:
    """Scale ``v`` (or each row of ``v``) down to L2 norm at most ``S``."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > S, S / norms, 1.0)
    return v * factor


def classical_gaussian_sigma(S: float, epsilon: float, delta: float) -> float:
    return S * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def _agm_excess(u: float, eps: float) -> float:
    # privacy-loss tail for noise-to-sensitivity ratio u = sigma / S
    a = 1.0 / (2.0 * u) - eps * u
    b = -1.0 / (2.0 * u) - eps * u
    return float(ndtr(a) - math.exp(min(eps + log_ndtr(b), 700.0)))


def calibrate_gaussian_sigma(S: float, epsilon1: float, delta: float, rtol: float = 1e-12) -> float:
    """Smallest sigma for which the analytic Gaussian mechanism is (epsilon1, delta)-DP.

    Bisection on ``sigma / S``; the result scales exactly linearly in ``S``.
    """
    if not S > 0:
        raise CalibrationError("sensitivity must be positive")
    if not epsilon1 > 0:
        raise CalibrationError("epsilon must be positive")
    if not 0 < delta < 1:
        raise CalibrationError("delta must lie in (0, 1)")
    lo, hi = 1e-12, 1.0
    if _agm_excess(lo, epsilon1) <= delta:
        raise CalibrationError("lower bracket already satisfies the privacy condition")
    for _ in range(200):
        if _agm_excess(hi, epsilon1) <= delta:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise CalibrationError("could not bracket sigma")
    for _ in range(400):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if _agm_excess(mid, epsilon1) <= delta:
            hi = mid
        else:
            lo = mid
    return hi * S


def privatize_sketch(
    raw_sum,
    count: float,
    map_fingerprint: str,
    budget: PrivacyBudget,
    clip: ClipSpec,
    seed: int,
) -> Sketch:
    """Release ``(v + xi) / (N + zeta)`` clamped to ``[z_min, z_max]``.

    ``raw_sum`` must be a sum of projections clipped at ``clip.S``. The noisy
    denominator is floored at 1.
    """
    v = np.asarray(raw_sum, dtype=float)
    rng = make_rng(seed, "dp-release")
    sigma = calibrate_gaussian_sigma(clip.S, budget.epsilon1, budget.delta)
    noisy = v + sigma * rng.standard_normal(v.shape)
    denom = float(count)
    if budget.epsilon2 > 0:
        denom += float(rng.laplace(0.0, 1.0 / budget.epsilon2))
    denom = max(denom, 1.0)
    z = np.clip(noisy / denom, clip.z_min, clip.z_max)
    return Sketch(z, denom, MEAN, map_fingerprint, DPInfo(budget.epsilon, budget.delta),
                  meta={"sigma": sigma})


def private_sketch(data, fmap: FeatureMap, budget: PrivacyBudget, clip: ClipSpec, seed: int) -> Sketch:
    """Clip every projection of ``data`` and release a private mean sketch."""
    X = np.asarray(data, dtype=float)
    v = clip_projection(fmap.apply(X), clip.S).sum(axis=0)
    return privatize_sketch(v, X.shape[0], fmap.fingerprint, budget, clip, seed)


def clamp_bounds(training_sketches) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate min and max over sketches seen during (meta-)training."""
    Z = np.atleast_2d(np.asarray(training_sketches, dtype=float))
    return Z.min(axis=0), Z.max(axis=0)


def generalization_bound(beta_phi, rho_psi, rho_ell, M_ell, N, delta) -> float:
    """Additive slack of the uniform-stability generalization bound.

    ``2 b/N + (4 b + M) sqrt(ln(1/delta) / (2N))`` with ``b = beta_phi rho_psi rho_ell``.
    """
    for name, value in (("beta_phi", beta_phi), ("rho_psi", rho_psi), ("rho_ell", rho_ell), ("M_ell", M_ell)):
        if not value >= 0:
            raise DomainError(f"{name} must be non-negative")
    if not N >= 1:
        raise DomainError("N must be at least 1")
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    b = beta_phi * rho_psi * rho_ell
    return 2.0 * b / N + (4.0 * b + M_ell) * math.sqrt(math.log(1.0 / delta) / (2.0 * N))
