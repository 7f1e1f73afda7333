from .metrics import psnr, ssim, warp_blend_baseline
from .sweep import evaluate_heldout, sweep_tau, write_sweep_csv

__all__ = ["psnr", "ssim", "warp_blend_baseline", "evaluate_heldout", "sweep_tau", "write_sweep_csv"]
