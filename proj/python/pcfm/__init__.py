"""Projected conditional flow matching for multi-coil MRI.

Thin bindings over the C++ core. Images are complex128 arrays of shape (H, W),
coil maps (C, H, W), masks boolean arrays over phase-encode lines. Measurements
are flat vectors laid out coil by coil, kept lines by readout.
"""

from ._core import (
    NumericalError,
    adjoint,
    center_lines,
    default_config,
    dense_operator,
    forward,
    generate_mask,
    projection,
    pseudoinverse,
    psnr,
    read_tensor,
    reconstruct,
    sense_combine,
    simulate_dataset,
    simulate_phantom,
    ssim,
    train,
    verify,
    write_tensor,
    zero_filled,
)

__all__ = [
    "NumericalError",
    "adjoint",
    "center_lines",
    "default_config",
    "dense_operator",
    "forward",
    "generate_mask",
    "projection",
    "pseudoinverse",
    "psnr",
    "read_tensor",
    "reconstruct",
    "sense_combine",
    "simulate_dataset",
    "simulate_phantom",
    "ssim",
    "train",
    "verify",
    "write_tensor",
    "zero_filled",
]
