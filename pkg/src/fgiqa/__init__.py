"""Fine-grained blind image quality assessment with camera parameter fusion
and a pairwise-ranking camera tuning harness."""

from .data import (
    ATTRIBUTES,
    PARAM_NAMES,
    AnnotationRecord,
    CameraParameters,
    DataError,
    DatasetManifest,
    ImageSample,
    MOSRecord,
    PairPreference,
    SampleRecord,
    load_manifest,
    save_manifest,
    split_scenes,
)

__version__ = "0.1.0"
