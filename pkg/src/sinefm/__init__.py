"""SineFM: convolution layers that grow most of their feature maps from a few seed maps.

A SineFM layer convolves its input with a small bank of learnable seed
filters, expands the seed maps through fixed, seeded nonlinear transforms,
and mixes the expanded maps with a learnable 1x1 convolution. Because the
transforms are regenerated from integer seeds, a trained model ships as seed
filters, mixing weights and seeds (see :mod:`sinefm.seedpack`).
"""

from .cost import compare, conv_flops, model_cost, sinefm_flops
from .errors import (ChecksumError, FormatError, GraphStateError, NumericError, ShapeError,
                     SineFMError, ValidationError, VersionError)
from .gradcheck import grad_check
from .layer import SineFMConfig, SineFMLayer, channel_plan, fit_alpha
from .network import (ArchDescriptor, build, convert_to_sinefm, load_descriptor,
                      parse_descriptor, predict)
from .seedpack import pack, size_report, unpack
from .tensor import Tensor
from .transforms import TransformFamily, sample_hyperparams

__version__ = "0.1.0"
