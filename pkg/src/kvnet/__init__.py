"""Desk-scale dual-domain MRI reconstruction: parallel image-domain and
frequency-domain networks cascaded with data consistency, plus the masks,
metrics, training loop and CLI around them."""

from .errors import FormatError, ShapeError
from .fourier import ComplexImage, channel_paired_transform, fft2c, ifft2c
from .metrics import MetricReport, nmse, psnr, ssim
from .models import (KNet, KNetCascade, KVNet, ModelConfig, UNet, VNet, VNetCascade,
                     build_model, cd_pool, cd_upsample, collect_params,
                     count_params_closed_form, count_params_instantiated, count_ratio,
                     data_consistency, fuse, fuse_coefficients, image_data_consistency,
                     kvnet_conv_count, load_checkpoint, save_checkpoint)
from .sampling import Mask, apply_mask, generate_random_mask, zero_fill
from .tensor import ParamStore, Tensor, grad_check
from .training import (PhantomSpec, TrainConfig, evaluate, make_phantom_dataset,
                       rmsprop_step, ssim_loss, train)

__version__ = "0.1.0"
