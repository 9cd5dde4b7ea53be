"""Learned fusion of multi-view migration fragments into quantitative
speed-of-sound images: shared transformer encoder, super-resolution
upsampler, graph-attention fusion, convolutional decoder."""

from .data import SliceSample, collate, load_dataset, load_slice, read_tensor
from .evaluate import evaluate
from .losses import FeatureExtractor, reconstruction_loss
from .metrics import rmse, ssim
from .model import FragmentFusionNet, FusionConfig, GraphAttentionUnit, ModelError, build_model
from .train import TrainingError, TrainResult, load_checkpoint, train

__version__ = "0.1.0"
