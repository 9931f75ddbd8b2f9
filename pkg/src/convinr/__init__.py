"""Coordinate networks for 2D images: convolutional INRs, MLP baselines,
and verified reparameterization fusion."""

from .ops import (BnParams, ConvKernel, activation_backward, activation_forward,
                  batchnorm_backward, batchnorm_forward, channel_scale,
                  channel_scale_backward, conv2d_backward, conv2d_forward,
                  global_avg_pool, global_avg_pool_backward, mse_loss, sigmoid)
from .layers import Block, EXPAND_RATIO, block_backward, block_forward, \
    block_params, positional_encode
from .models import (FAMILIES, LockedShapeError, Model, ModelSpec, build_model,
                     capture_bn_stats, make_coordinate_grid, model_backward,
                     model_forward)
from .reparam import (FusionReport, fold_bn, fuse_branches, fuse_dynamic,
                      fuse_model, fuse_pointwise_chain, verify_equivalence)
from .training import (AdamState, FitReport, NonFiniteLossError, TrainConfig,
                       adam_step, fit, psnr, render)
from .rng import SeededRng, seeded_rng
from .io import (BadMagicError, FormatError, TruncatedFileError,
                 UnsupportedVersionError, load_checkpoint, load_image,
                 load_tensor, save_checkpoint, save_image, save_tensor,
                 write_csv)
from .spectrum import SpectrumProfile, fft2d_magnitude, image_spectrum_profile, \
    radial_profile
from .synthetic import natural_test_image

__version__ = "0.1.0"
