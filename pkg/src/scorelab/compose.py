"""Noise-prediction composers: guidance, fusion, negation, and projection.

All operations broadcast over leading batch axes; the last axis is the
feature dimension. Negative-prompt weights are stored as nonnegative
magnitudes and subtracted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ComposerConfig",
    "perpendicular_component",
    "cfg_compose",
    "cebm_compose",
    "naive_negation_compose",
    "perp_neg_compose",
]

ZERO_NORM_THRESHOLD = 1e-12


@dataclass(frozen=True)
class ComposerConfig:
    """Guidance scale, positive weight, and negative-prompt magnitudes."""

    guidance: float = 7.5
    w_pos: float = 1.0
    neg_weights: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "neg_weights", tuple(float(w) for w in self.neg_weights))
        if self.guidance < 0:
            raise ValueError(f"guidance must be >= 0, got {self.guidance!r}")
        if not self.w_pos > 0:
            raise ValueError(f"w_pos must be > 0, got {self.w_pos!r}")
        if any(w < 0 for w in self.neg_weights):
            raise ValueError(
                f"neg_weights must be nonnegative magnitudes, got {self.neg_weights!r}"
            )


def _check_same_shape(*arrays):
    shapes = {np.asarray(a).shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch between predictions: {sorted(shapes)}")
    return [np.asarray(a, dtype=float) for a in arrays]


def perpendicular_component(e_i: np.ndarray, e_main: np.ndarray) -> np.ndarray:
    """Component of ``e_i`` orthogonal to ``e_main``.

    Returns ``e_i - (<e_i, e_main> / ||e_main||^2) * e_main``; when
    ``||e_main||`` is below 1e-12 the projection is undefined and ``e_i`` is
    returned unchanged.
    """
    e_i, e_main = _check_same_shape(e_i, e_main)
    norm_sq = np.sum(e_main * e_main, axis=-1, keepdims=True)
    small = norm_sq < ZERO_NORM_THRESHOLD**2
    denom = np.where(small, 1.0, norm_sq)
    coeff = np.sum(e_i * e_main, axis=-1, keepdims=True) / denom
    return np.where(small, e_i, e_i - coeff * e_main)


def cfg_compose(eps_u: np.ndarray, eps_c: np.ndarray, tau: float) -> np.ndarray:
    """Classifier-free guidance: ``(1 + tau) * eps_c - tau * eps_u``."""
    eps_u, eps_c = _check_same_shape(eps_u, eps_c)
    return (1.0 + tau) * eps_c - tau * eps_u


def cebm_compose(
    eps_u: np.ndarray, eps_list: list[np.ndarray], weights: list[float]
) -> np.ndarray:
    """Composed predictor ``eps_u + sum_i w_i (eps_i - eps_u)``; weights may be signed."""
    if len(eps_list) != len(weights):
        raise ValueError(
            f"got {len(eps_list)} predictions but {len(weights)} weights"
        )
    out = np.asarray(eps_u, dtype=float)
    for eps_i, w in zip(eps_list, weights):
        eps_u, eps_i = _check_same_shape(eps_u, eps_i)
        out = out + w * (eps_i - eps_u)
    return out


def naive_negation_compose(
    eps_u: np.ndarray,
    eps_pos: np.ndarray,
    eps_neg_list: list[np.ndarray],
    cfg: ComposerConfig,
) -> np.ndarray:
    """Guided prediction minus whole negative deltas (the fusion baseline).

    ``cfg_compose(eps_u, eps_pos, tau) - sum_i w_i (eps_neg_i - eps_u)``.
    """
    if len(eps_neg_list) != len(cfg.neg_weights):
        raise ValueError(
            f"got {len(eps_neg_list)} negatives but {len(cfg.neg_weights)} weights"
        )
    out = cfg_compose(eps_u, eps_pos, cfg.guidance)
    for eps_neg, w in zip(eps_neg_list, cfg.neg_weights):
        eps_u, eps_neg = _check_same_shape(eps_u, eps_neg)
        out = out - w * (eps_neg - eps_u)
    return out


def perp_neg_compose(
    eps_u: np.ndarray,
    eps_pos: np.ndarray,
    eps_neg_list: list[np.ndarray],
    cfg: ComposerConfig,
) -> np.ndarray:
    """Negation through perpendicular projection; the positive component survives.

    ``eps_u + tau * (w_pos * d_pos - sum_i w_i * perp(d_i, d_pos))`` with
    ``d_pos = eps_pos - eps_u`` and ``d_i = eps_neg_i - eps_u``. Projecting
    each negative delta onto the orthogonal complement of ``d_pos`` leaves the
    output's component along ``d_pos`` equal to ``tau * w_pos`` regardless of
    the negatives.
    """
    if len(eps_neg_list) != len(cfg.neg_weights):
        raise ValueError(
            f"got {len(eps_neg_list)} negatives but {len(cfg.neg_weights)} weights"
        )
    eps_u, eps_pos = _check_same_shape(eps_u, eps_pos)
    d_pos = eps_pos - eps_u
    guided = cfg.w_pos * d_pos
    for eps_neg, w in zip(eps_neg_list, cfg.neg_weights):
        _, eps_neg = _check_same_shape(eps_u, eps_neg)
        guided = guided - w * perpendicular_component(eps_neg - eps_u, d_pos)
    return eps_u + cfg.guidance * guided
