"""Adversarial shape learning for building segmentation, desk scale."""

from .tensor import (GeometryError, ShapeError, Tape, Tensor, UsageError,
                     backward, concat_channels, leaky_relu, loss_bce,
                     loss_mse, no_grad, relu, sigmoid, sum_all)
from .nnops import (ConvSpec, DeformableConvSpec, avg_pool2d, bilinear_sample,
                    conv2d, deformable_conv2d, group_norm, upsample_bilinear)
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, optimizer_step
from .models import (EDFCNConfig, SegmentationModel, ShapeDiscriminator,
                     ShapeRegularizer, sd_forward, segment_forward, sr_forward)
from .train import TrainConfig, binarize, discriminator_step, segmenter_step, train
from .checkpoint import (Checkpoint, CheckpointFormatError,
                         build_models_from_checkpoint, load_checkpoint,
                         save_checkpoint)
from .metrics import (MatchPair, MetricsReport, SegObject, confusion_counts,
                      connected_components, contour_curvature,
                      curvature_error, evaluate_pair, match_objects,
                      matching_rate, oa_threshold_curve, overlap_errors,
                      perimeter, pixel_metrics, shape_error, trace_contour)
from .synth import (GenerationError, Sample, SceneConfig, generate_dataset,
                    generate_scene, read_dataset, write_dataset)

__version__ = "0.1.0"
