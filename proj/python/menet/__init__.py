"""Multi-task single-image de-raining: tensors, losses, weighting, metrics,
rain synthesis, training and inference backed by the C++ core."""

from ._menet import (  # noqa: F401
    CheckpointError,
    ConfigError,
    DataError,
    ModelConfig,
    NumericError,
    ShapeError,
    balanced_weights,
    conv2d,
    derain,
    desubpixel,
    edge_aware_loss,
    gb_weights,
    gradcheck_suite,
    lb_weights,
    load_checkpoint_info,
    parameter_count,
    pixel_loss,
    procedural_image,
    psnr,
    rain_layer,
    read_image,
    run_cli,
    ssim,
    subpixel,
    synthesize_rain,
    texture_matching_loss,
    train,
    write_image,
)

__all__ = [name for name in dir() if not name.startswith("_")]
