from .warp import (
    backward_warp,
    binary_occlusion_mask,
    downscale,
    forward_splat_avg,
    forward_splat_softmax,
    rescale_flow,
    splat_density,
    upsample_flow,
)

__all__ = [
    "backward_warp",
    "binary_occlusion_mask",
    "downscale",
    "forward_splat_avg",
    "forward_splat_softmax",
    "rescale_flow",
    "splat_density",
    "upsample_flow",
]
