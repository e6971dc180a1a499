"""Backbone feature export emitting PVF1/PVT1 files and manifest JSON."""

from .backbones import (
    BackboneError,
    TextBackbone,
    VisionBackbone,
    load_text_backbone,
    load_vision_backbone,
)
from .export import AnnotationError, ExportJob, export_image_features, export_qa, run_export
from .formats import (
    ExportFormatError,
    half_open_to_xywh,
    write_manifest,
    write_pvf1,
    write_pvt1,
    xywh_to_half_open,
)
from .sample_data import make_sample_dataset

__version__ = "0.1.0"
