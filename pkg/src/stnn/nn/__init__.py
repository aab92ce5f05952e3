"""Forward, input-gradient and parameter-gradient kernels for all unit kinds."""

from .activations import ACTIVATION_KINDS, activation_backward, activation_forward
from .conv import (
    ConvSpec,
    aslet_residue,
    conv_backward_input,
    conv_backward_params,
    conv_forward,
    conv_out_shape,
    conv_param_count,
    padding_for,
    resolve_padding,
)
from .fc import fc_backward, fc_forward, sliced_fc_backward, sliced_fc_forward
from .interp import (
    InterpSpec,
    interp_backward,
    interp_forward,
    interp_out_shape,
    interp_weights,
)
from .norm import (
    NormState,
    batchnorm_accumulate,
    batchnorm_backward,
    batchnorm_forward,
    instancenorm_backward,
    instancenorm_forward,
)
from .params import param_count
from .pool import (
    PoolSpec,
    avgpool_backward,
    avgpool_forward,
    maxpool_backward,
    maxpool_forward,
    pool_out_shape,
)

__all__ = [name for name in dir() if not name.startswith("_")]
