"""Structured pruning of decoder-only transformers: heads, FFN channels,
regression recovery and layerwise ratio allocation."""
from .calibration import CalibrationSet, collect_traces, sample_calibration, tokenize_bytes
from .errors import InvalidInputError, ModelFormatError, NumericalError, PipelineError
from .kernels import BACKEND
from .model import CaptureSpec, LayerWeights, Model, ModelConfig, forward, forward_with_trace
from .model_io import gen_toy_model, load_model, save_model
from .pruner import PruneOptions, PruningPlan, param_count, prunable_param_count, prune_pipeline

__version__ = "0.1.0"
