"""Standalone exporter for .fpm probability-map files.

Turns model output arrays or annotation JSON into map files that the
segmentation pipeline's file-replay backend consumes, without importing the
pipeline itself.
"""

from .formats import (
    ANNOTATION_SCHEMA_VERSION,
    Annotation,
    ExportError,
    ExportJob,
    FPM_MAGIC,
    ObjectShape,
    check_labels,
    decode_runs,
    export_fpm,
    fpm_bytes,
    load_annotation,
    normalized_values,
    parse_annotation,
    run_export_job,
)
from .render import (
    annotation_to_fpm,
    derive_generator,
    paint_labelmap,
    render_probability,
)

__all__ = [
    "ANNOTATION_SCHEMA_VERSION",
    "Annotation",
    "ExportError",
    "ExportJob",
    "FPM_MAGIC",
    "ObjectShape",
    "annotation_to_fpm",
    "check_labels",
    "decode_runs",
    "derive_generator",
    "export_fpm",
    "fpm_bytes",
    "load_annotation",
    "normalized_values",
    "paint_labelmap",
    "parse_annotation",
    "render_probability",
    "run_export_job",
]

__version__ = "0.1.0"
