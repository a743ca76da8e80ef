#!/usr/bin/env python3
"""Regenerate the bundled fixtures: two synthetic scenes, a miniature VOC-style
and COCO-style dataset around them, and a replay cache recorded by running the
pipeline write-through against the procedural backend.

Run from the repository root:  python scripts/make_fixtures.py
"""
from __future__ import annotations

import itertools
import json
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from freeseg.backbones.cache import TensorCache
from freeseg.backbones.clients import CachingBackend
from freeseg.backbones.features import ImageRecord
from freeseg.backbones.synthetic import SyntheticBackend
from freeseg.config import PipelineConfig
from freeseg.evaluation.datasets import encode_compressed_rle, encode_rle
from freeseg.pipeline import segment_image
from freeseg.visualize import color_map
from freeseg.vocabulary import load_class_list

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

H, W = 48, 64

CONCEPT_COLORS = {
    "sky": (135, 200, 235),
    "tree": (40, 140, 60),
    "branch": (120, 80, 40),
    "bird": (200, 60, 50),
    "grass": (80, 170, 70),
    "dog": (150, 100, 60),
    "ball": (230, 230, 235),
}

CAPTIONS = {
    "bird": "A small bird perched on a branch of a tree",
    "dog": "A dog playing with a ball on the grass",
}

# VOC21 indices: bird=3, dog=12; everything else background
VOC_INDEX = {"bird": 3, "dog": 12}


def bird_scene() -> tuple[np.ndarray, np.ndarray]:
    """Pixels and a region-name index map (0=sky 1=tree 2=branch 3=bird)."""
    names = ["sky", "tree", "branch", "bird"]
    region = np.zeros((H, W), dtype=np.int64)
    region[4:40, 44:] = 1  # tree canopy right
    region[28:34, 0:50] = 2  # branch strip
    yy, xx = np.mgrid[0:H, 0:W]
    body = ((yy - 22) / 6.0) ** 2 + ((xx - 26) / 8.0) ** 2 <= 1.0
    region[body] = 3
    pixels = np.zeros((H, W, 3), dtype=np.uint8)
    for idx, name in enumerate(names):
        pixels[region == idx] = CONCEPT_COLORS[name]
    return pixels, np.array(names, dtype=object)[region]


def dog_scene() -> tuple[np.ndarray, np.ndarray]:
    names = ["grass", "dog", "ball"]
    region = np.zeros((H, W), dtype=np.int64)
    yy, xx = np.mgrid[0:H, 0:W]
    body = ((yy - 24) / 11.0) ** 2 + ((xx - 20) / 13.0) ** 2 <= 1.0
    region[body] = 1
    ball = ((yy - 34) / 8.0) ** 2 + ((xx - 50) / 8.0) ** 2 <= 1.0
    region[ball] = 2
    pixels = np.zeros((H, W, 3), dtype=np.uint8)
    for idx, name in enumerate(names):
        pixels[region == idx] = CONCEPT_COLORS[name]
    return pixels, np.array(names, dtype=object)[region]


def write_voc_dataset(scenes: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    voc = FIXTURES / "dataset_voc"
    (voc / "JPEGImages").mkdir(parents=True, exist_ok=True)
    (voc / "SegmentationClass").mkdir(parents=True, exist_ok=True)
    ids = sorted(scenes)
    for image_id in ids:
        pixels, regions = scenes[image_id]
        Image.fromarray(pixels).save(voc / "JPEGImages" / f"{image_id}.png")
        gt = np.zeros((H, W), dtype=np.uint8)
        for name, voc_idx in VOC_INDEX.items():
            gt[regions == name] = voc_idx
        gt[0:2, :] = 255  # void stripe exercises the ignore index
        label = Image.fromarray(gt, mode="P")
        label.putpalette(color_map().ravel().tolist())
        label.save(voc / "SegmentationClass" / f"{image_id}.png")
    (voc / "split.txt").write_text("\n".join(ids) + "\n")


def write_coco_dataset(scenes: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """Two-image COCO-style annotation file covering polygon, raw RLE and
    compressed RLE segmentations."""
    coco = FIXTURES / "dataset_coco"
    (coco / "images").mkdir(parents=True, exist_ok=True)
    bird_pixels, bird_regions = scenes["bird"]
    dog_pixels, dog_regions = scenes["dog"]
    Image.fromarray(bird_pixels).save(coco / "images" / "bird.png")
    Image.fromarray(dog_pixels).save(coco / "images" / "dog.png")

    # polygon for the tree canopy block (an exact rectangle)
    tree_poly = [44.0, 4.0, 63.0, 4.0, 63.0, 39.0, 44.0, 39.0]
    bird_rle = encode_rle(bird_regions == "bird")
    dog_rle = encode_rle(dog_regions == "dog")
    ball_rle_str = encode_compressed_rle(encode_rle(dog_regions == "ball"))

    blob = {
        "images": [
            {"id": 1, "file_name": "bird.png", "height": H, "width": W},
            {"id": 2, "file_name": "dog.png", "height": H, "width": W},
        ],
        "categories": [
            {"id": 16, "name": "bird", "supercategory": "animal"},
            {"id": 18, "name": "dog", "supercategory": "animal"},
            {"id": 37, "name": "sports ball", "supercategory": "sports"},
            {"id": 64, "name": "potted plant", "supercategory": "furniture"},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 64, "segmentation": [tree_poly]},
            {"id": 2, "image_id": 1, "category_id": 16,
             "segmentation": {"size": [H, W], "counts": bird_rle}},
            {"id": 3, "image_id": 2, "category_id": 18,
             "segmentation": {"size": [H, W], "counts": dog_rle}},
            {"id": 4, "image_id": 2, "category_id": 37,
             "segmentation": {"size": [H, W], "counts": ball_rle_str}},
        ],
    }
    (coco / "annotations.json").write_text(json.dumps(blob, indent=1))


def record_cache(images: dict[str, ImageRecord]) -> None:
    cache_dir = FIXTURES / "cache"
    if cache_dir.exists():
        shutil.rmtree(cache_dir)
    backend = CachingBackend(
        SyntheticBackend(CONCEPT_COLORS, CAPTIONS), TensorCache(cache_dir)
    )
    voc_classes = load_class_list(ROOT / "src" / "freeseg" / "data" / "voc21.txt")

    # Embeddings depend on masks (so on K, resolutions, attention) but not on
    # the refinement stage; record with refinement off, covering every cell of
    # the ablation grids, then the two reference configurations end to end.
    grid = itertools.product(
        [3, 4, 5],
        [(16,), (32,), (64,), (16, 32), (32, 64), (16, 32, 64)],
        [False, True],
    )
    for k, resolutions, attn in grid:
        config = PipelineConfig(k=k, resolutions=resolutions, include_attention=attn,
                                refinement="none")
        for image in images.values():
            segment_image(image, backend, config, dataset_classes=voc_classes)

    for image in images.values():
        segment_image(image, backend, PipelineConfig(), dataset_classes=voc_classes)
        segment_image(image, backend, PipelineConfig(candidate_mode="open"))
    print(f"cache recorded under {cache_dir}")


def main() -> int:
    scenes = {"bird": bird_scene(), "dog": dog_scene()}
    (FIXTURES / "images").mkdir(parents=True, exist_ok=True)
    images = {}
    for image_id, (pixels, _) in scenes.items():
        path = FIXTURES / "images" / f"{image_id}.png"
        Image.fromarray(pixels).save(path)
        images[image_id] = ImageRecord(id=image_id, pixels=pixels)
        print(f"wrote {path}")
    write_voc_dataset(scenes)
    write_coco_dataset(scenes)
    record_cache(images)
    return 0


if __name__ == "__main__":
    sys.exit(main())
