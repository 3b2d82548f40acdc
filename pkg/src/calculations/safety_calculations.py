"""
Smooth safety-distance constraint D_safe(s1, delta_s, v1) <= 0.

D_safe = alpha(s1) * (d_min + tau * v1 + margin) - sqrt(delta_s^2 + delta_smooth^2), with the logistic
activation alpha(s1) = 1 / (1 + exp(-beta_act * (s1 - s_act))). Far before the merge point the required gap
fades out, so Agent 1 may pass Agent 2 there; close to and after it the full headway gap is required.
"""
import numpy as np
from scipy.special import expit

from src.SafetyParams import SafetyParams

SIDES = ("lower", "upper")


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise ValueError("Invalid side. Must be 'lower' or 'upper'.")


def activation(s1: float, p: SafetyParams) -> float:
    return float(expit(p.beta_act * (s1 - p.s_act)))


def smooth_abs(delta_s: float, p: SafetyParams) -> float:
    return float(np.hypot(delta_s, p.delta_smooth))


def d_safe(s1: float, delta_s: float, v1: float, p: SafetyParams) -> float:
    return activation(s1, p) * p.required_gap(v1) - smooth_abs(delta_s, p)


def d_safe_grad(s1: float, delta_s: float, v1: float, p: SafetyParams) -> tuple[float, np.ndarray]:
    """Value and gradient with respect to (s1, delta_s, v1)."""
    alpha = activation(s1, p)
    gap = p.required_gap(v1)
    h = smooth_abs(delta_s, p)
    gradient = np.array([p.beta_act * alpha * (1.0 - alpha) * gap, -delta_s / h, alpha * p.tau])
    return alpha * gap - h, gradient


def _shifted(delta_s: float, shift: float, side: str) -> float:
    _check_side(side)
    return delta_s - shift if side == "lower" else delta_s + shift


def d_safe_tightened(s1: float, delta_s: float, v1: float, margin_ds: float, side: str, p: SafetyParams) -> float:
    """D_safe at delta_s moved by margin_ds toward Agent 2 on the given side (lower: Agent 2 ahead)."""
    if margin_ds < 0:
        raise ValueError("Invalid margin_ds. Must be nonnegative.")
    return d_safe(s1, _shifted(delta_s, margin_ds, side), v1, p)


def d_safe_gp(s1: float, delta_s: float, v1: float, sigma_s2: float, side: str, p: SafetyParams) -> float:
    """Uncertainty-adapted constraint: delta_s shifted by two standard deviations of the Agent-2 position."""
    if sigma_s2 < 0:
        raise ValueError("Invalid sigma_s2. Must be nonnegative.")
    return d_safe(s1, _shifted(delta_s, 2.0 * sigma_s2, side), v1, p)


def d_safe_gp_grad(s1: float, delta_s: float, v1: float, sigma_s2: float, side: str,
                   p: SafetyParams) -> tuple[float, np.ndarray]:
    """Value and gradient of d_safe_gp with respect to (s1, delta_s, v1); sigma_s2 is held constant."""
    value = d_safe_gp(s1, delta_s, v1, sigma_s2, side, p)
    _, gradient = d_safe_grad(s1, _shifted(delta_s, 2.0 * sigma_s2, side), v1, p)
    return value, gradient


def shrink(delta_s: float, margin: float) -> float:
    """The point of [delta_s - margin, delta_s + margin] closest to zero."""
    return float(np.sign(delta_s) * max(abs(delta_s) - margin, 0.0))


def d_safe_robust(s1: float, delta_s: float, v1: float, margin: float, p: SafetyParams) -> float:
    """
    Worst case of D_safe over every delta_s perturbation up to ``margin``.

    Equals the larger of the two one-sided tightened values unless the perturbation can close the gap
    entirely, and stays C1 in delta_s.
    """
    if margin < 0:
        raise ValueError("Invalid margin. Must be nonnegative.")
    if abs(delta_s) <= margin:
        return d_safe(s1, 0.0, v1, p)
    return max(d_safe_tightened(s1, delta_s, v1, margin, side, p) for side in SIDES)


def d_safe_robust_grad(s1: float, delta_s: float, v1: float, margin: float,
                       p: SafetyParams) -> tuple[float, np.ndarray]:
    value, gradient = d_safe_grad(s1, shrink(delta_s, margin), v1, p)
    if abs(delta_s) <= margin:
        gradient[1] = 0.0
    return value, gradient


def binding_side(delta_s: float) -> str:
    """Agent 2 ahead (delta_s >= 0) binds the lower side, Agent 2 behind binds the upper side."""
    return "lower" if delta_s >= 0 else "upper"
