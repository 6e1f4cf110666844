"""convdump: extract lowered conv/FC weights and sampled responses to NPY files."""

__version__ = "0.1.0"

from .export import ExportError, export_layer, export_model, im2col, lower_filter, validate_manifest
from .model import ModelError, ToyModel, forward, load_model, make_toy

__all__ = [
    "ExportError",
    "ModelError",
    "ToyModel",
    "export_layer",
    "export_model",
    "forward",
    "im2col",
    "load_model",
    "lower_filter",
    "make_toy",
    "validate_manifest",
]
