"""Explicit visual prompting lab.

Micro autograd tensors, a desk-scale vision transformer in plain and
hierarchical shapes, frequency-domain prompt generators, a segmentation
decoder, training and evaluation tooling, and a synthetic-data workbench.
"""

from .backbone import Backbone, BackboneConfig, TokenGrid, b4_shape, hier_desk, plain_desk
from .dataset import DatasetManifest, SegmentationSample, load_manifest, load_samples, synth_dataset
from .decoder import Decoder, DecoderConfig
from .errors import ConfigError, EvpError, FormatError, NumericError, ShapeError
from .frequency import FrequencyMask, analytic_zero_fraction, extract_hfc, make_hfc_mask
from .metrics import MetricsReport
from .model import SegmentationModel, build_model
from .prompting import PromptConfig, PromptV1, PromptV2, prompt_param_count
from .serialization import read_checkpoint, read_evpt, write_checkpoint, write_evpt
from .tensor import ComplexGrid, Tensor, grad_check, no_grad
from .training import TrainConfig, train
from .workbench import CompareReport, compare, evaluate, pretrain, tau_sweep

__all__ = [
    "Backbone",
    "BackboneConfig",
    "CompareReport",
    "ComplexGrid",
    "ConfigError",
    "DatasetManifest",
    "Decoder",
    "DecoderConfig",
    "EvpError",
    "FormatError",
    "FrequencyMask",
    "MetricsReport",
    "NumericError",
    "PromptConfig",
    "PromptV1",
    "PromptV2",
    "SegmentationModel",
    "SegmentationSample",
    "ShapeError",
    "Tensor",
    "TokenGrid",
    "TrainConfig",
    "analytic_zero_fraction",
    "b4_shape",
    "build_model",
    "compare",
    "evaluate",
    "extract_hfc",
    "grad_check",
    "hier_desk",
    "load_manifest",
    "load_samples",
    "make_hfc_mask",
    "no_grad",
    "plain_desk",
    "pretrain",
    "prompt_param_count",
    "read_checkpoint",
    "read_evpt",
    "synth_dataset",
    "tau_sweep",
    "train",
    "write_checkpoint",
    "write_evpt",
]

__version__ = "0.1.0"
