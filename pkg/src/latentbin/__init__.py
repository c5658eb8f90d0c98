"""Binary flag probability model for quantized latents.

Exact code lengths, a relaxed rate for gradient fitting, a range coder and
rate-distortion evaluation, next to discretized Gaussian and Laplace
baselines.
"""

from latentbin.bitstream import Bitstream, decode_tensor, encode_tensor
from latentbin.errors import FitDivergence, FormatError, SubgradientPointError
from latentbin.evaluation import (
    RdCurve,
    bd_rate,
    empirical_cross_entropy,
    empirical_entropy,
    estimate_rate,
    psnr,
    rd_sweep,
)
from latentbin.fit import FitConfig, closed_form_binary_flags, fit, loss
from latentbin.models import (
    BinaryModelParams,
    DiscretePmf,
    GaussianParams,
    Granularity,
    LaplaceParams,
    ModelKind,
    ParameterSet,
    binary_code_length,
    binary_pmf,
    code_length,
    explicit_code_length,
    flag_code_length,
    gaussian_code_length,
    laplace_code_length,
    model_pmf,
    read_params,
    write_params,
)
from latentbin.relaxed import (
    finite_difference_check,
    gamma,
    relaxed_binary_rate,
    relaxed_binary_rate_grad,
    relaxed_gaussian_rate,
    relaxed_gaussian_rate_grad,
    relaxed_laplace_rate,
    relaxed_laplace_rate_grad,
)
from latentbin.sources import SourceSpec, generate_synthetic
from latentbin.tensor import (
    LatentTensor,
    QuantizedTensor,
    QuantSpec,
    add_uniform_noise,
    dequantize,
    quantize,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"
