"""Communication-efficient distributed SGD with dithered gradient quantization.

The package simulates synchronous multi-worker training where gradients cross
the wire as small integer indices plus a handful of scale factors.  Dither is
never transmitted: both sides regenerate it from shared (seed, round)
coordinates, which keeps reconstruction bit-exact and the quantization error
uniform and input-independent.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DecodeError, ProtocolError, TrainingDiverged
from .dither import DitherCoordinates, advance_round, dither_at, dither_block, mix64, worker_seed
from .quantizers import (
    ExcessVarianceBounds,
    GradientVector,
    OneBitMessage,
    OneBitState,
    PartitionBound,
    QuantizedMessage,
    UniformQuantizerCfg,
    dithered_decode,
    dithered_encode,
    excess_variance_bound,
    half_dithered_quantize,
    onebit_decode,
    onebit_encode,
    partition_encode,
    stochastic_quantize,
    stochastic_variance,
    uniform_quantize,
)
from .nested import (
    NestedConfig,
    NestedMessage,
    SideInfoModel,
    alpha_optimal,
    failure_prob_bound,
    nested_decode,
    nested_decode_vector,
    nested_encode,
    nested_encode_vector,
    nested_mse,
)
from .coding import (
    BitReport,
    IndexStream,
    aac_decode,
    aac_encode,
    coded_payload_bits,
    empirical_entropy,
    make_bit_report,
    packed_raw_bits,
    raw_bits,
)
from .wire import (
    KIND_DITHERED,
    KIND_NESTED,
    KIND_STOCHASTIC,
    pack_nested_message,
    pack_quantized_message,
    unpack_nested_message,
    unpack_quantized_message,
)
from .stats import (
    ALPHA,
    CorrelationResult,
    KsResult,
    independence_check,
    ks_uniform,
    moment_estimate,
    summarize,
    tv_distance,
)
from .problems import (
    GaussianNoiseQuadratic,
    LogisticBlobsProblem,
    MlpProblem,
    Problem,
    QuadraticProblem,
    finite_difference_grad,
    measure_sg_stats,
    mlp_param_count,
    sg_oracle,
)
from .optim import (
    HorizonInputs,
    OptState,
    adam_state,
    adam_step,
    bounded_sg_constants,
    current_lr,
    excess_time_ratio,
    quantized_sigma_sq,
    sgd_state,
    sgd_step,
    step,
    training_horizon,
)
from .simnet import (
    ExperimentConfig,
    RoundReport,
    Simulation,
    measure_aggregate_variance,
    run_dqsgd_round,
    run_experiment,
    run_ndqsg_round,
    write_reports_csv,
)
from .verify import run_verification

__all__ = [
    "__version__",
    # errors
    "ConfigError", "DecodeError", "ProtocolError", "TrainingDiverged",
    # dither
    "DitherCoordinates", "advance_round", "dither_at", "dither_block", "mix64", "worker_seed",
    # quantizers
    "ExcessVarianceBounds", "GradientVector", "OneBitMessage", "OneBitState", "PartitionBound",
    "QuantizedMessage", "UniformQuantizerCfg", "dithered_decode", "dithered_encode",
    "excess_variance_bound", "half_dithered_quantize", "onebit_decode", "onebit_encode",
    "partition_encode", "stochastic_quantize", "stochastic_variance", "uniform_quantize",
    # nested
    "NestedConfig", "NestedMessage", "SideInfoModel", "alpha_optimal", "failure_prob_bound",
    "nested_decode", "nested_decode_vector", "nested_encode", "nested_encode_vector", "nested_mse",
    # coding
    "BitReport", "IndexStream", "aac_decode", "aac_encode", "coded_payload_bits",
    "empirical_entropy", "make_bit_report", "packed_raw_bits", "raw_bits",
    # wire
    "KIND_DITHERED", "KIND_NESTED", "KIND_STOCHASTIC", "pack_nested_message",
    "pack_quantized_message", "unpack_nested_message", "unpack_quantized_message",
    # stats
    "ALPHA", "CorrelationResult", "KsResult", "independence_check", "ks_uniform",
    "moment_estimate", "summarize", "tv_distance",
    # problems
    "GaussianNoiseQuadratic", "LogisticBlobsProblem", "MlpProblem", "Problem",
    "QuadraticProblem", "finite_difference_grad", "measure_sg_stats", "mlp_param_count", "sg_oracle",
    # optim
    "HorizonInputs", "OptState", "adam_state", "adam_step", "bounded_sg_constants", "current_lr",
    "excess_time_ratio", "quantized_sigma_sq", "sgd_state", "sgd_step", "step", "training_horizon",
    # simnet
    "ExperimentConfig", "RoundReport", "Simulation", "measure_aggregate_variance",
    "run_dqsgd_round", "run_experiment", "run_ndqsg_round", "write_reports_csv",
    # verify
    "run_verification",
]
