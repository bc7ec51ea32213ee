"""Ghost modules and GhostNet on a small numpy CNN core."""
from .arch import (LayerSpec, NetworkSpec, build_ghostnet, build_tiny, build_vgg16, format_spec,
                   ghostify, load_spec, parse_spec, round_width, save_spec, validate)
from .cost import (CostReport, compression_ratio, count_flops, count_params, flops_conv,
                   flops_ghost_module, speedup_ratio)
from .errors import FormatError, GhostConvError, ShapeError, SpecError
from .ghost import GhostBottleneck, GhostModule, GhostModuleConfig, SEBlock
from .kernels import BACKEND
from .network import Network, load_checkpoint, materialize, save_checkpoint
from .tensor import get_default_dtype, set_default_dtype

__version__ = "0.1.0"
