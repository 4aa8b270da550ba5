"""Analytic prompt-conditioned score model on Gaussian-mixture worlds.

Each prompt is a weight vector over a shared set of isotropic Gaussian
modes. Diffusing a mixture component ``N(mu_k, s_k I)`` for ``t`` steps
yields ``N(sqrt(abar_t) mu_k, (abar_t s_k + 1 - abar_t) I)``, so densities,
scores, and the optimal noise prediction are all available in closed form.
The noise prediction returned by :func:`eps_pred` is the exact minimizer of
the usual denoising objective:

    eps_hat(x, t, c) = -sqrt(1 - abar_t) * grad_x log q_t(x | c).

All queries are pure and accept batched ``x`` of shape ``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import VarianceSchedule

__all__ = [
    "Mode",
    "PromptEmbedding",
    "OracleWorld",
    "interpolate_embeddings",
    "noised_density",
    "log_noised_density",
    "eps_pred",
    "mode_responsibilities",
    "overlap_ratio",
]

_WEIGHT_SUM_TOL = 1e-9


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-sum-exp with max subtraction; tolerates -inf entries."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


@dataclass(frozen=True)
class Mode:
    """A named isotropic Gaussian component ``N(mean, cov_scale * I)``."""

    id: str
    mean: np.ndarray
    cov_scale: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if not self.cov_scale > 0:
            raise ValueError(f"cov_scale must be > 0, got {self.cov_scale!r}")


@dataclass(frozen=True)
class PromptEmbedding:
    """Mixture weights over the world's modes; nonnegative, summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if np.any(w < 0):
            raise ValueError(f"embedding weights must be nonnegative, got {w}")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"embedding weights must sum to 1, got sum={w.sum()!r}")


def interpolate_embeddings(
    e1: PromptEmbedding, e2: PromptEmbedding, r: float
) -> PromptEmbedding:
    """Convex blend ``r * e1 + (1 - r) * e2``, renormalized defensively."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"interpolation factor must be in [0, 1], got {r}")
    w = r * e1.weights + (1.0 - r) * e2.weights
    return PromptEmbedding(w / w.sum())


@dataclass(frozen=True)
class OracleWorld:
    """Immutable prompt world: shared modes, a prompt table, and a prompt prior.

    ``prompts`` maps prompt labels to embeddings over ``modes`` (in mode list
    order); ``prior`` assigns each label its marginal probability. The
    unconditional distribution is the prior-weighted mixture of the prompt
    conditionals, i.e. the mixture with the prior-averaged weight vector.
    """

    dim: int
    modes: tuple[Mode, ...]
    prompts: dict[str, PromptEmbedding]
    prior: dict[str, float]
    means: np.ndarray = field(init=False, repr=False, compare=False)
    cov_scales: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if len(self.modes) == 0:
            raise ValueError("world must define at least one mode")
        means = np.stack([m.mean for m in self.modes])
        if means.shape[1] != self.dim:
            raise ValueError(
                f"mode means have dimension {means.shape[1]}, world dim is {self.dim}"
            )
        ids = [m.id for m in self.modes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate mode ids: {ids}")
        object.__setattr__(self, "means", means)
        object.__setattr__(
            self, "cov_scales", np.array([m.cov_scale for m in self.modes])
        )
        for label, emb in self.prompts.items():
            if emb.weights.shape != (len(self.modes),):
                raise ValueError(
                    f"prompt {label!r} has {emb.weights.shape[0]} weights for "
                    f"{len(self.modes)} modes"
                )
        if set(self.prior) != set(self.prompts):
            raise ValueError("prior labels must match prompt labels")
        pr = np.array([self.prior[k] for k in self.prompts])
        if np.any(pr < 0) or abs(float(pr.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"prior must be nonnegative and sum to 1, got {self.prior}")

    @property
    def mode_ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.modes)

    def mode_index(self, mode_id: str) -> int:
        for i, m in enumerate(self.modes):
            if m.id == mode_id:
                return i
        raise KeyError(f"unknown mode id {mode_id!r}")

    def embedding(self, condition) -> PromptEmbedding:
        """Resolve a condition: prompt label, ``None`` (unconditional), or embedding."""
        if condition is None:
            return self.unconditional_embedding()
        if isinstance(condition, PromptEmbedding):
            return condition
        if condition not in self.prompts:
            raise KeyError(f"unknown prompt label {condition!r}")
        return self.prompts[condition]

    def unconditional_embedding(self) -> PromptEmbedding:
        w = np.zeros(len(self.modes))
        for label, emb in self.prompts.items():
            w = w + self.prior[label] * emb.weights
        return PromptEmbedding(w / w.sum())


def _noised_params(world, t, sched):
    """Per-mode noised means and isotropic variances at step(s) ``t``."""
    abar = np.asarray(sched.alpha_bar(t))
    m = np.sqrt(abar)[..., None, None] * world.means
    v = abar[..., None] * world.cov_scales + (1.0 - abar[..., None])
    return m, v


def _check_point(world, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != world.dim:
        raise ValueError(
            f"point has dimension {x.shape[-1]}, world dim is {world.dim}"
        )
    return x


def _log_component_densities(world, x, t, sched):
    """log N(x; m_k, v_k I) for every mode, shape (..., K).

    ``t`` may be a scalar or an integer array broadcasting against the
    leading axes of ``x``.
    """
    x = _check_point(world, x)
    m, v = _noised_params(world, t, sched)
    diff = x[..., None, :] - m
    sq = np.sum(diff * diff, axis=-1)
    return -0.5 * (world.dim * np.log(2.0 * np.pi * v) + sq / v)


def _log_weights(embedding: PromptEmbedding) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(embedding.weights)


def log_noised_density(world, embedding, x, t, sched) -> np.ndarray:
    """Log of :func:`noised_density`; preferred for gradients and tails."""
    logs = _log_component_densities(world, x, t, sched)
    return _logsumexp(_log_weights(embedding) + logs, axis=-1)


def noised_density(
    world: OracleWorld,
    embedding: PromptEmbedding,
    x: np.ndarray,
    t: int,
    sched: VarianceSchedule,
) -> float | np.ndarray:
    """Exact density of forward-diffused mixture samples at ``x`` after ``t`` steps.

    Equals ``sum_k w_k N(x; sqrt(abar_t) mu_k, (abar_t s_k + 1 - abar_t) I)``;
    at ``t = 0`` this is the clean mixture density.
    """
    out = np.exp(log_noised_density(world, embedding, x, t, sched))
    return float(out) if np.ndim(out) == 0 else out


def eps_pred(
    world: OracleWorld,
    condition,
    x: np.ndarray,
    t: int | np.ndarray,
    sched: VarianceSchedule,
) -> np.ndarray:
    """Optimal noise prediction for the noised mixture at ``(x, t)``.

    With responsibilities ``r_k(x)`` proportional to ``w_k N(x; m_k, v_k I)``
    (computed in log space), returns

        sqrt(1 - abar_t) * sum_k r_k(x) * (x - m_k) / v_k.

    ``condition`` is a prompt label, ``None`` for the unconditional model, or
    a :class:`PromptEmbedding`.
    """
    emb = world.embedding(condition)
    x = _check_point(world, x)
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise IndexError(f"step index t={t} outside [1, {sched.T}]")
    logs = _log_weights(emb) + _log_component_densities(world, x, t, sched)
    m = np.max(logs, axis=-1, keepdims=True)
    r = np.exp(logs - m)
    r = r / np.sum(r, axis=-1, keepdims=True)
    means_t, vars_t = _noised_params(world, t, sched)
    pulls = (x[..., None, :] - means_t) / vars_t[..., None]
    abar = np.asarray(sched.alpha_bar(t))
    return np.sqrt(1.0 - abar)[..., None] * np.sum(r[..., None] * pulls, axis=-2)


def mode_responsibilities(
    world: OracleWorld,
    embedding: PromptEmbedding,
    x: np.ndarray,
    t: int = 0,
    sched: VarianceSchedule | None = None,
) -> np.ndarray:
    """Posterior mode probabilities at ``x`` under the given mixture weights.

    ``t = 0`` (the default) uses the clean densities and needs no schedule.
    """
    if t == 0:
        x = _check_point(world, x)
        diff = x[..., None, :] - world.means
        sq = np.sum(diff * diff, axis=-1)
        logs = -0.5 * (
            world.dim * np.log(2.0 * np.pi * world.cov_scales) + sq / world.cov_scales
        )
    else:
        logs = _log_component_densities(world, x, t, sched)
    logs = _log_weights(embedding) + logs
    m = np.max(logs, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("density underflow: all components vanish at x")
    r = np.exp(logs - m)
    return r / np.sum(r, axis=-1, keepdims=True)


def overlap_ratio(
    world: OracleWorld, c1: str, c2: str, x: np.ndarray
) -> float:
    """Pointwise dependence ratio ``p(c1, c2 | x) / (p(c1 | x) p(c2 | x))``.

    The joint treats the two prompt labels as captions emitted independently
    given the generating mode, so with mode posterior ``P(m | x)`` under the
    unconditional clean mixture and caption probabilities
    ``P(c | m) = prior_c * w_c[m] / u_m``,

        p(c1, c2 | x) = sum_m P(m | x) P(c1 | m) P(c2 | m),

    while the marginals reduce to Bayes on the clean densities,
    ``p(c | x) = prior_c * p(x | c) / p(x)``. The ratio is 1 wherever the
    captions are conditionally independent given ``x`` (e.g. at points whose
    mode posterior is concentrated), exceeds 1 where the prompts share modes,
    and equals ``1 / p(c | x)`` on the diagonal for disjoint prompt supports.
    """
    for label in (c1, c2):
        if label not in world.prompts:
            raise KeyError(f"unknown prompt label {label!r}")
    x = _check_point(world, x)
    if x.ndim != 1:
        raise ValueError("overlap_ratio expects a single point")
    uncond = world.unconditional_embedding()
    post = mode_responsibilities(world, uncond, x)
    u = uncond.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        cap1 = np.where(u > 0, world.prior[c1] * world.prompts[c1].weights / u, 0.0)
        cap2 = np.where(u > 0, world.prior[c2] * world.prompts[c2].weights / u, 0.0)
    p1 = float(np.sum(post * cap1))
    p2 = float(np.sum(post * cap2))
    if p1 <= 0.0 or p2 <= 0.0:
        raise ValueError(
            f"degenerate input: conditional density of {c1!r} or {c2!r} vanishes at x"
        )
    joint = float(np.sum(post * cap1 * cap2))
    return joint / (p1 * p2)
