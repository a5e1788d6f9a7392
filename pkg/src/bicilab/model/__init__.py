from .config import VARIANTS, ModelConfig, ModelConfigError, receptive_field
from .network import (
    SideOutput,
    as_tensors,
    check_params,
    denoised_electrodogram,
    forward,
    forward_graph,
    fuse,
    init_params,
    mirror_params,
    parameter_shapes,
)

__all__ = [
    "VARIANTS", "ModelConfig", "ModelConfigError", "receptive_field", "SideOutput", "as_tensors",
    "check_params", "denoised_electrodogram", "forward", "forward_graph", "fuse", "init_params",
    "mirror_params", "parameter_shapes",
]
