"""Sample records, file formats, augmentation and the synthetic dataset."""

from .records import LIGHTING_MODES, DataError, LabelRecord, SampleRecord, TaskIndicator, collate
from .netpbm import NetpbmError, load_netpbm, save_netpbm
from .synth import synth_dataset, synth_sample
from .transforms import augment, resize_bilinear, resize_nearest, scale_sizes
from .manifest import read_manifest, write_manifest

__all__ = [
    "LIGHTING_MODES",
    "DataError",
    "LabelRecord",
    "SampleRecord",
    "TaskIndicator",
    "collate",
    "NetpbmError",
    "load_netpbm",
    "save_netpbm",
    "synth_dataset",
    "synth_sample",
    "augment",
    "resize_bilinear",
    "resize_nearest",
    "scale_sizes",
    "read_manifest",
    "write_manifest",
]
