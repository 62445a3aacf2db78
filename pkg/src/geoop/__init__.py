"""geoop: a norm-stable spectral operator workbench.

Low-rank skew-symmetric latent updates with exact stability identities, a
compact spectral neural operator with hand-written reverse-mode gradients,
deterministic PDE trajectory generators, a reproducible training loop, and
rollout evaluation with energy/entropy diagnostics.
"""

from .errors import (
    BlowupError,
    CapacityError,
    ConfigError,
    DataFormatError,
    DivergenceRiskError,
    GeoopError,
    NonConvergenceError,
    NumericalError,
    ShapeError,
    UndefinedMetricError,
)
from .evaluation import (
    EvalReport,
    energy,
    evaluate,
    rel_h1,
    rel_l2,
    rollout,
    spectral_entropy,
)
from .lie import (
    GeneratorNormEstimate,
    LowRankGenerator,
    apply_generator,
    exact_step,
    growth_bound_check,
    mcl_step,
    neumann_inverse_apply,
    norm_drift,
    random_generator,
    spectral_norm,
)
from .numerics import RngStream, cg_solve, dft, grf_sample, matrix_exp
from .operator import (
    GradientTape,
    ModelConfig,
    OperatorModel,
    SpectralLayer,
    downsample,
    gelu,
    model_backward,
    model_forward,
    param_count,
    spectral_conv_forward,
)
from .pdegen import (
    EquationSpec,
    TrajectoryDataset,
    generate_dataset,
    make_spec,
    read_gnod,
    retardation,
    sample_initial_condition,
    solve_advection,
    solve_burgers,
    solve_darcy,
    solve_diffusion_sorption,
    write_gnod,
)
from .train import (
    AdamState,
    Checkpoint,
    TrainConfig,
    adam_step,
    cosine_lr,
    load_checkpoint,
    mse_loss,
    pushforward_step,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"
