from .cache import TensorCache, SHARED_ID
from .features import FeatureMap, FeatureStack, ImageRecord, resize_bilinear, build_stack, load_image
from .clients import (
    Backend,
    ReplayBackend,
    CachingBackend,
    ModelBackend,
    EmbeddingVector,
    extract_features,
    caption_image,
    embed_image,
    embed_text,
    image_content_key,
    text_content_key,
)

__all__ = [
    "TensorCache",
    "SHARED_ID",
    "FeatureMap",
    "FeatureStack",
    "ImageRecord",
    "resize_bilinear",
    "build_stack",
    "load_image",
    "Backend",
    "ReplayBackend",
    "CachingBackend",
    "ModelBackend",
    "EmbeddingVector",
    "extract_features",
    "caption_image",
    "embed_image",
    "embed_text",
    "image_content_key",
    "text_content_key",
]
