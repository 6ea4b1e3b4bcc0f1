"""Numerical lab for linear self-attention vs. linear prediction on AR(p) data."""

from .stochastic import (
    ArProcess,
    AutocovTable,
    CompanionMatrix,
    SeriesPath,
    UnstableProcessError,
    autocovariances,
    bayes_multistep_mse,
    check_stability,
    companion,
    derive_seed,
    impulse_response,
    ols_fit,
    sample_path,
    sample_windows,
    yule_walker_solve,
)
from .hankel import (
    CubicFeature,
    GramMatrix,
    HankelSlice,
    build_hankel,
    cubic_features,
    feature_collapse_error,
    masked_gram,
)
from .attention import (
    DivergenceError,
    LsaLayerFull,
    LsaParams,
    SoftmaxParams,
    StackParams,
    TrainConfig,
    constructive_params,
    lsa_forward_full,
    readout_closed_form,
    softmax_forward,
    stack_forward,
    train_bilinear,
    train_gradient,
)
from .moments import (
    Ar1WarmStart,
    GuardExceededError,
    LiftedMoments,
    PairingSet,
    VechIndexer,
    ar1_warm_start,
    ar1_warm_start_oracle,
    exact_lifted_moments,
    isserlis,
    mc_lifted_moments,
)
from .gap import (
    GapConditioningError,
    GapReport,
    MultiLayerGap,
    RateFit,
    compute_gap,
    multilayer_gap,
    rate_fit,
    risk_decomposition,
    uniform_gap_sweep,
)
from .rollout import (
    CompoundingCurve,
    HorizonReport,
    LinearPredictor,
    LsaPredictor,
    RolloutTrace,
    SoftmaxPredictor,
    StackPredictor,
    bayes_rollout,
    collapse_diagnostics,
    compounding_curve,
    cot_rollout,
    failure_horizon,
    teacher_forcing_eval,
)

__version__ = "0.1.0"
