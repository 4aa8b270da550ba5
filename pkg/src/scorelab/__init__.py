"""Score-composition and score-distillation experiments on analytic mixture worlds."""

from .compose import (
    ComposerConfig,
    cebm_compose,
    cfg_compose,
    naive_negation_compose,
    perp_neg_compose,
    perpendicular_component,
)
from .distill import (
    CameraView,
    DivergenceError,
    Scene,
    SDSConfig,
    ViewPromptPlan,
    WeightFn,
    assemble_view_prompts,
    default_view_plan,
    interpolate_pair,
    janus_score,
    optimize,
    perp_neg_sds_grad,
    render,
    sds_grad,
)
from .oracle import (
    Mode,
    OracleWorld,
    PromptEmbedding,
    eps_pred,
    interpolate_embeddings,
    log_noised_density,
    mode_responsibilities,
    noised_density,
    overlap_ratio,
)
from .sampler import (
    SampleRun,
    SuccessReport,
    classify_mode,
    classify_modes,
    generate,
    success_table,
)
from .schedule import (
    VarianceSchedule,
    build_schedule,
    ddim_step,
    ddim_timesteps,
    ddpm_step,
    forward_sample,
)
from . import worlds

__version__ = "0.1.0"
