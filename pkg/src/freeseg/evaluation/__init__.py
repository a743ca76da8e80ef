from .metrics import EvalAccumulator, update, miou, pixel_accuracy, per_class_iou, merge
from .datasets import (
    DatasetSpec,
    load_dataset_spec,
    load_ground_truth,
    load_dataset_image,
    list_image_ids,
    decode_rle,
    encode_rle,
    decode_compressed_rle,
    encode_compressed_rle,
)
from .benchmark import Report, run_benchmark

__all__ = [
    "EvalAccumulator",
    "update",
    "miou",
    "pixel_accuracy",
    "per_class_iou",
    "merge",
    "DatasetSpec",
    "load_dataset_spec",
    "load_ground_truth",
    "load_dataset_image",
    "list_image_ids",
    "decode_rle",
    "encode_rle",
    "decode_compressed_rle",
    "encode_compressed_rle",
    "Report",
    "run_benchmark",
]
