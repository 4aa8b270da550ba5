"""Score distillation on a toy azimuth-parameterized scene.

The scene is a ring of feature bins; a camera view renders the circular
linear interpolation of the two bins bracketing its azimuth. Distillation
perturbs the rendered feature with forward noise, asks the analytic oracle
for a (guided or negation-projected) noise prediction, and chains the
residual back onto the bracketing bins:

    grad = w(t) * (eps_hat - eps) * d(render)/d(bins).

View prompts follow the front/side/back assignment scheme with embedding
interpolation between adjacent anchor views and r-dependent negative
weights ``f(r) = a * exp(-b * r) + c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compose import cfg_compose, perpendicular_component
from .oracle import (
    OracleWorld,
    PromptEmbedding,
    eps_pred,
    interpolate_embeddings,
)
from .sampler import classify_modes
from .schedule import VarianceSchedule, forward_sample

__all__ = [
    "Scene",
    "CameraView",
    "WeightFn",
    "ViewPromptPlan",
    "SDSConfig",
    "DivergenceError",
    "IterationRecord",
    "render",
    "render_weights",
    "sector_of",
    "sector_of_degrees",
    "bin_sectors",
    "assemble_view_prompts",
    "interpolate_pair",
    "sds_grad",
    "perp_neg_sds_grad",
    "optimize",
    "janus_score",
    "default_view_plan",
]

TWO_PI = 2.0 * math.pi


class DivergenceError(RuntimeError):
    """Raised when the optimization loop leaves the trust region."""

    def __init__(self, iteration: int, norm: float):
        super().__init__(
            f"feature norm {norm:.3e} exceeded 1e6 at iteration {iteration}"
        )
        self.iteration = iteration


@dataclass
class Scene:
    """Azimuth-binned feature grid; bin ``b`` is centered at ``2*pi*b/B``."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] < 3:
            raise ValueError(f"scene needs at least 3 bins, got {self.features.shape[0]}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("scene features must be finite")

    @property
    def bins(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def bin_azimuths(self) -> np.ndarray:
        return TWO_PI * np.arange(self.bins) / self.bins

    def copy(self) -> "Scene":
        return Scene(self.features.copy())


def sector_of_degrees(deg: float) -> str:
    """Named view sector: front [-45, 45), side [45, 135) or [225, 315), back [135, 225)."""
    deg = deg % 360.0
    if deg < 45.0 or deg >= 315.0:
        return "front"
    if deg < 135.0 or deg >= 225.0:
        return "side"
    return "back"


def sector_of(azimuth: float) -> str:
    """Sector of an azimuth given in radians."""
    return sector_of_degrees(math.degrees(azimuth % TWO_PI))


@dataclass(frozen=True)
class CameraView:
    """A camera azimuth in radians; the sector name is derived, never stored."""

    azimuth: float

    @property
    def sector(self) -> str:
        return sector_of(self.azimuth)


@dataclass(frozen=True)
class WeightFn:
    """Shifted exponential decay ``f(r) = a * exp(-b * r) + c`` on [0, 1]."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.c < 0:
            raise ValueError(f"WeightFn parameters must be >= 0, got {self}")

    def __call__(self, r: float) -> float:
        return self.a * math.exp(-self.b * r) + self.c


@dataclass(frozen=True)
class ViewPromptPlan:
    """Per-view prompt assignments: anchors, static weights, and interpolation.

    ``flip_sf_argument`` switches the side-negative weight on the front-side
    pair from ``f_sf(1 - r)`` (as printed) to ``f_sf(r)``.
    """

    emb_front: PromptEmbedding
    emb_side: PromptEmbedding
    emb_back: PromptEmbedding
    w_back_side: float = 1.0
    w_back_front: float = 1.0
    w_side_front: float = 1.5
    w_front_side: float = 1.5
    f_sb: WeightFn = WeightFn(1.0, 3.0, 0.0)
    f_fsb: WeightFn = WeightFn(0.5, 2.0, 0.5)
    f_fs: WeightFn = WeightFn(1.45, 5.0, 0.05)
    f_sf: WeightFn = WeightFn(1.45, 5.0, 0.05)
    r_perturb_delta: float = 0.05
    flip_sf_argument: bool = False

    def __post_init__(self):
        weights = (self.w_back_side, self.w_back_front, self.w_side_front, self.w_front_side)
        if any(w < 0 for w in weights):
            raise ValueError(f"static negative weights must be >= 0, got {weights}")
        if self.r_perturb_delta < 0:
            raise ValueError(f"r_perturb_delta must be >= 0, got {self.r_perturb_delta}")


def default_view_plan(world: OracleWorld, **overrides) -> ViewPromptPlan:
    """Plan wired to the world's ``front``/``side``/``back`` prompt labels."""
    return ViewPromptPlan(
        emb_front=world.embedding("front"),
        emb_side=world.embedding("side"),
        emb_back=world.embedding("back"),
        **overrides,
    )


@dataclass(frozen=True)
class SDSConfig:
    """Distillation knobs: guidance, timestep window, loss weight, step size.

    ``draws_per_iter`` is the number of Monte Carlo (t, eps) draws averaged
    into each gradient estimate; draws within one estimate are independent
    and may be evaluated in parallel.
    """

    guidance: float = 7.5
    t_min: float = 0.02
    t_max: float = 0.98
    weight_fn: str = "constant"
    step_size: float = 0.05
    iterations: int = 1000
    seed: int = 0
    draws_per_iter: int = 1
    init_scale: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.t_min < self.t_max <= 1.0:
            raise ValueError(
                f"timestep range must satisfy 0 <= t_min < t_max <= 1, got "
                f"[{self.t_min}, {self.t_max}]"
            )
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.draws_per_iter < 1:
            raise ValueError(f"draws_per_iter must be >= 1, got {self.draws_per_iter}")
        if self.weight_fn not in ("constant", "one_minus_alpha_bar"):
            raise ValueError(f"unknown weight_fn {self.weight_fn!r}")

    def t_bounds(self, sched: VarianceSchedule) -> tuple[int, int]:
        lo = max(1, int(round(self.t_min * sched.T)))
        hi = min(sched.T, int(round(self.t_max * sched.T)))
        return lo, hi

    def loss_weight(self, t, sched: VarianceSchedule):
        if self.weight_fn == "constant":
            return np.ones_like(np.asarray(t, dtype=float))
        return 1.0 - np.asarray(sched.alpha_bar(t), dtype=float)


def render_weights(scene: Scene, azimuth: float) -> tuple[int, int, float, float]:
    """Bracketing bins and interpolation weights for an azimuth."""
    u = (azimuth % TWO_PI) / TWO_PI * scene.bins
    b0 = int(math.floor(u)) % scene.bins
    b1 = (b0 + 1) % scene.bins
    frac = u - math.floor(u)
    return b0, b1, 1.0 - frac, frac


def render(scene: Scene, v: CameraView) -> np.ndarray:
    """Circularly interpolated feature at the view's azimuth; 2*pi periodic."""
    b0, b1, w0, w1 = render_weights(scene, v.azimuth)
    return w0 * scene.features[b0] + w1 * scene.features[b1]


def _pair_and_r(azimuth: float) -> tuple[str, float]:
    """Map an azimuth to its anchor pair and interpolation factor.

    Quadrants: [0, 90) front-side with r = 1 at front; [90, 180) side-back
    with r = 1 at side; [180, 270) side-back mirrored; [270, 360) front-side
    mirrored. r is linear in angular distance between the two anchors.
    """
    deg = math.degrees(azimuth % TWO_PI)
    if deg < 90.0:
        return "front-side", 1.0 - deg / 90.0
    if deg < 180.0:
        return "side-back", 1.0 - (deg - 90.0) / 90.0
    if deg < 270.0:
        return "side-back", (deg - 180.0) / 90.0
    return "front-side", (deg - 270.0) / 90.0


def interpolate_pair(
    plan: ViewPromptPlan, pair: str, r: float
) -> tuple[PromptEmbedding, list[tuple[PromptEmbedding, float]]]:
    """Interpolated positive embedding and weighted negatives for a pair.

    side-back: positive ``r * emb_side + (1 - r) * emb_back`` with negatives
    ``[(side, f_sb(r)), (front, f_fsb(r))]``. front-side: positive
    ``r * emb_front + (1 - r) * emb_side`` with negatives
    ``[(front, f_fs(r)), (side, f_sf(1 - r))]``.
    """
    if pair == "side-back":
        positive = interpolate_embeddings(plan.emb_side, plan.emb_back, r)
        negatives = [
            (plan.emb_side, plan.f_sb(r)),
            (plan.emb_front, plan.f_fsb(r)),
        ]
    elif pair == "front-side":
        positive = interpolate_embeddings(plan.emb_front, plan.emb_side, r)
        sf_arg = r if plan.flip_sf_argument else 1.0 - r
        negatives = [
            (plan.emb_front, plan.f_fs(r)),
            (plan.emb_side, plan.f_sf(sf_arg)),
        ]
    else:
        raise ValueError(f"unknown pair {pair!r}")
    return positive, negatives


def _anchor_prompts(plan: ViewPromptPlan, pair: str, r: float):
    """Static prompt sets at exact anchors (r equal to 0 or 1)."""
    if pair == "side-back" and r == 0.0:
        return plan.emb_back, [
            (plan.emb_side, plan.w_back_side),
            (plan.emb_front, plan.w_back_front),
        ]
    if pair == "front-side" and r == 1.0:
        return plan.emb_front, [(plan.emb_side, plan.w_front_side)]
    # both remaining anchors are the side view
    return plan.emb_side, [(plan.emb_front, plan.w_side_front)]


def assemble_view_prompts(
    v: CameraView, plan: ViewPromptPlan, r_noise: float = 0.0
) -> tuple[PromptEmbedding, list[tuple[PromptEmbedding, float]]]:
    """Positive embedding and weighted negatives for a camera view.

    The interpolation factor is linear in angular distance within the view's
    anchor pair, perturbed by ``r_noise`` and clipped to [0, 1]. Exact
    anchors (r in {0, 1} after clipping) return the static per-view prompt
    sets; interior factors use the interpolation weight functions.
    """
    if abs(r_noise) > plan.r_perturb_delta:
        raise ValueError(
            f"|r_noise|={abs(r_noise)} exceeds r_perturb_delta={plan.r_perturb_delta}"
        )
    pair, r = _pair_and_r(v.azimuth)
    r = min(1.0, max(0.0, r + r_noise))
    if r == 0.0 or r == 1.0:
        return _anchor_prompts(plan, pair, r)
    return interpolate_pair(plan, pair, r)


def _scatter_grad(scene: Scene, azimuth: float, resid: np.ndarray) -> np.ndarray:
    """Chain a residual through the renderer onto the two bracketing bins."""
    b0, b1, w0, w1 = render_weights(scene, azimuth)
    grad = np.zeros_like(scene.features)
    grad[b0] += w0 * resid
    grad[b1] += w1 * resid
    return grad


def sds_grad(
    scene: Scene,
    v: CameraView,
    positive: PromptEmbedding,
    world: OracleWorld,
    sched: VarianceSchedule,
    cfg: SDSConfig,
    t: int | np.ndarray,
    eps: np.ndarray,
) -> np.ndarray:
    """Single-draw (or batched-draw) distillation gradient over scene bins.

    Perturbs the rendered feature to ``x_t``, queries the guided oracle
    prediction, and returns ``w(t) * (eps_hat - eps)`` chained onto the two
    bracketing bins. With arrays ``t`` of shape (k,) and ``eps`` of shape
    (k, d) the k draws are averaged. The oracle is never differentiated
    through.
    """
    x = render(scene, v)
    x_t = forward_sample(x, t, eps, sched)
    eps_u = eps_pred(world, None, x_t, t, sched)
    eps_c = eps_pred(world, positive, x_t, t, sched)
    eps_hat = cfg_compose(eps_u, eps_c, cfg.guidance)
    resid = cfg.loss_weight(t, sched)[..., None] * (eps_hat - eps)
    if resid.ndim > 1:
        resid = resid.mean(axis=0)
    return _scatter_grad(scene, v.azimuth, resid)


def perp_neg_sds_grad(
    scene: Scene,
    v: CameraView,
    plan: ViewPromptPlan,
    world: OracleWorld,
    sched: VarianceSchedule,
    cfg: SDSConfig,
    t: int | np.ndarray,
    eps: np.ndarray,
    r_noise: float = 0.0,
) -> np.ndarray:
    """Distillation gradient with projection-based negative view prompts.

    The guided prediction is ``eps_u + guidance * (d_pos - sum_i w_i *
    perp(d_i, d_pos))`` with raw conditional deltas at the view's assembled
    prompts; the rest matches :func:`sds_grad`.
    """
    positive, negatives = assemble_view_prompts(v, plan, r_noise)
    x = render(scene, v)
    x_t = forward_sample(x, t, eps, sched)
    eps_u = eps_pred(world, None, x_t, t, sched)
    d_pos = eps_pred(world, positive, x_t, t, sched) - eps_u
    guided = d_pos.copy()
    for emb, w in negatives:
        d_i = eps_pred(world, emb, x_t, t, sched) - eps_u
        guided -= w * perpendicular_component(d_i, d_pos)
    eps_hat = eps_u + cfg.guidance * guided
    resid = cfg.loss_weight(t, sched)[..., None] * (eps_hat - eps)
    if resid.ndim > 1:
        resid = resid.mean(axis=0)
    return _scatter_grad(scene, v.azimuth, resid)


@dataclass
class IterationRecord:
    iteration: int
    azimuth: float
    t_mean: float
    grad_norm: float
    janus: float
    assignments: tuple[str, ...] = field(repr=False, default=())


def optimize(
    scene: Scene,
    world: OracleWorld,
    plan: ViewPromptPlan,
    cfg: SDSConfig,
    sched: VarianceSchedule,
    variant: str = "vanilla",
) -> tuple[Scene, list[IterationRecord]]:
    """Fixed-step gradient descent over the scene with per-iteration logging.

    Each iteration draws a uniform azimuth, ``draws_per_iter`` (t, eps)
    pairs, and an interpolation perturbation from ``default_rng([seed,
    iteration])``, applies the selected gradient, and records the view, mean
    timestep, gradient norm, and sector score. The ``vanilla`` variant uses
    the assembled positive prompt with plain guidance; ``perp_neg`` adds the
    projected negatives. Aborts with :class:`DivergenceError` if any feature
    norm exceeds 1e6.
    """
    if variant not in ("vanilla", "perp_neg"):
        raise ValueError(f"variant must be 'vanilla' or 'perp_neg', got {variant!r}")
    scene = scene.copy()
    t_lo, t_hi = cfg.t_bounds(sched)
    log: list[IterationRecord] = []
    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, it])
        azimuth = float(rng.uniform(0.0, TWO_PI))
        ts = rng.integers(t_lo, t_hi + 1, size=cfg.draws_per_iter)
        eps = rng.standard_normal((cfg.draws_per_iter, world.dim))
        r_noise = float(rng.uniform(-plan.r_perturb_delta, plan.r_perturb_delta))
        v = CameraView(azimuth)
        if variant == "perp_neg":
            grad = perp_neg_sds_grad(scene, v, plan, world, sched, cfg, ts, eps, r_noise)
        else:
            positive, _ = assemble_view_prompts(v, plan, r_noise)
            grad = sds_grad(scene, v, positive, world, sched, cfg, ts, eps)
        scene.features -= cfg.step_size * grad
        norms = np.linalg.norm(scene.features, axis=-1)
        if np.any(norms > 1e6):
            raise DivergenceError(iteration=it, norm=float(norms.max()))
        assignments = tuple(classify_modes(world, scene.features))
        log.append(
            IterationRecord(
                iteration=it,
                azimuth=azimuth,
                t_mean=float(np.mean(ts)),
                grad_norm=float(np.linalg.norm(grad)),
                janus=_sector_accuracy(scene, assignments),
                assignments=assignments,
            )
        )
    return scene, log


def bin_sectors(bins: int) -> list[str]:
    """Target sector per bin, computed in exact degrees so boundary bins
    (e.g. a bin centered exactly at 45 degrees) classify deterministically."""
    return [sector_of_degrees(360.0 * b / bins) for b in range(bins)]


def _sector_accuracy(scene: Scene, assignments: tuple[str, ...]) -> float:
    targets = bin_sectors(scene.bins)
    return sum(a == t for a, t in zip(assignments, targets)) / scene.bins


def janus_score(scene: Scene, world: OracleWorld) -> float:
    """Fraction of bins whose feature classifies to its view sector's mode.

    Requires the world to define modes named ``front``, ``side``, and
    ``back``; 1.0 means every bin shows the correct view.
    """
    for mode_id in ("front", "side", "back"):
        world.mode_index(mode_id)
    assignments = tuple(classify_modes(world, scene.features))
    return _sector_accuracy(scene, assignments)
