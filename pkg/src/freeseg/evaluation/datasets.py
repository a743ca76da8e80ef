"""Dataset ingestion: VOC-style paletted label maps and COCO-style annotations.

VOC ground truth is read straight from paletted PNGs (index 255 = void,
ignored in scoring). COCO ground truth is rasterized from polygons or RLE
(uncompressed counts or the compact string encoding, both column-major),
back-to-front in annotation order so later annotations overwrite earlier
ones. The 27-supercategory variant applies a {fine class -> supercategory}
remap after rasterization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..assignment import SegmentationMap
from ..backbones.features import ImageRecord
from ..errors import CorruptRLE, MissingAnnotation
from ..vocabulary import load_class_list

BUILTIN_DATASETS = ("voc21", "voc-c", "coco81", "coco27")
_BUILTIN_CLASS_FILES = {"voc21": "voc21.txt", "voc-c": "voc21.txt",
                        "coco81": "coco81.txt", "coco27": "coco27.txt"}


@dataclass
class DatasetSpec:
    name: str
    root: Path
    classes: list[str]
    split_file: Path | None = None
    remap: dict[str, str] | None = None
    annotations: Path | None = None  # COCO JSON; defaults to <root>/annotations.json
    ignore_index: int = 255

    @property
    def is_coco(self) -> bool:
        return self.name.startswith("coco") or (
            self.name == "custom" and self.annotation_path().exists()
        )

    def annotation_path(self) -> Path:
        return self.annotations or (self.root / "annotations.json")


def _builtin_text(filename: str) -> str:
    return resources.files("freeseg.data").joinpath(filename).read_text()


def builtin_class_list(name: str) -> list[str]:
    lines = [ln.strip() for ln in _builtin_text(_BUILTIN_CLASS_FILES[name]).splitlines()]
    return [ln for ln in lines if ln]


def builtin_supercategory_map() -> dict[str, str]:
    return json.loads(_builtin_text("coco_supercategories.json"))


def load_dataset_spec(
    name: str,
    root: str | Path,
    split_file: str | Path | None = None,
    classes_file: str | Path | None = None,
    remap_file: str | Path | None = None,
    annotations: str | Path | None = None,
) -> DatasetSpec:
    """Resolve a dataset by name; bundled class lists cover the builtin names."""
    root = Path(root)
    if classes_file is not None:
        classes = load_class_list(classes_file)
    elif name in _BUILTIN_CLASS_FILES:
        classes = builtin_class_list(name)
    else:
        raise ValueError(f"dataset {name!r} needs an explicit classes file")
    remap = None
    if remap_file is not None:
        remap = json.loads(Path(remap_file).read_text())
    elif name == "coco27":
        remap = builtin_supercategory_map()
    if name == "voc-c" and split_file is None:
        raise ValueError("voc-c is a split over the VOC root; pass its split file")
    return DatasetSpec(
        name=name,
        root=root,
        classes=classes,
        split_file=Path(split_file) if split_file else None,
        remap=remap,
        annotations=Path(annotations) if annotations else None,
    )


# ---------------------------------------------------------------------------
# run-length codecs (column-major, first run counts background pixels)


def decode_rle(counts: list[int], height: int, width: int) -> np.ndarray:
    """Uncompressed RLE -> bool mask. Runs alternate 0/1 starting at 0."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise CorruptRLE(f"negative run length in {counts[:8]}...")
    total = sum(counts)
    if total != height * width:
        raise CorruptRLE(f"runs sum to {total}, canvas has {height * width} pixels")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((height, width), order="F")


def encode_rle(mask: np.ndarray) -> list[int]:
    """Bool mask -> uncompressed RLE counts (column-major, leading zero run)."""
    flat = np.asarray(mask, dtype=bool).reshape(-1, order="F")
    counts: list[int] = []
    value = False
    run = 0
    for bit in flat:
        if bit == value:
            run += 1
        else:
            counts.append(run)
            value = bool(bit)
            run = 1
    counts.append(run)
    return counts


def encode_compressed_rle(counts: list[int]) -> str:
    """Pack RLE counts into the compact char string (5 bits per char, delta
    coded against the run two places back)."""
    chars: list[str] = []
    for i, count in enumerate(counts):
        x = int(count)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


def decode_compressed_rle(encoded: str) -> list[int]:
    counts: list[int] = []
    pos = 0
    while pos < len(encoded):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(encoded[pos]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def rasterize_polygons(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    """Fill flat [x0, y0, x1, y1, ...] polygon rings into a bool mask."""
    canvas = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    for ring in polygons:
        points = list(zip(ring[0::2], ring[1::2]))
        if len(points) >= 3:
            draw.polygon(points, outline=1, fill=1)
    return np.asarray(canvas, dtype=bool)


def annotation_to_mask(segmentation, height: int, width: int) -> np.ndarray:
    """COCO segmentation field (polygons or RLE dict) -> bool mask."""
    if isinstance(segmentation, dict):
        h, w = segmentation.get("size", (height, width))
        counts = segmentation["counts"]
        if isinstance(counts, str):
            counts = decode_compressed_rle(counts)
        return decode_rle(counts, int(h), int(w))
    return rasterize_polygons(segmentation, height, width)


# ---------------------------------------------------------------------------
# loaders


class _CocoIndex:
    """Lazily parsed COCO annotation JSON, shared across lookups."""

    def __init__(self, path: Path):
        if not path.exists():
            raise MissingAnnotation(f"no COCO annotation file at {path}")
        blob = json.loads(path.read_text())
        self.images = {str(img["id"]): img for img in blob.get("images", [])}
        self.category_names = {int(c["id"]): c["name"] for c in blob.get("categories", [])}
        self.by_image: dict[str, list[dict]] = {}
        for ann in blob.get("annotations", []):
            self.by_image.setdefault(str(ann["image_id"]), []).append(ann)


_coco_cache: dict[str, _CocoIndex] = {}


def _coco_index(spec: DatasetSpec) -> _CocoIndex:
    key = str(spec.annotation_path())
    if key not in _coco_cache:
        _coco_cache[key] = _CocoIndex(spec.annotation_path())
    return _coco_cache[key]


def list_image_ids(spec: DatasetSpec) -> list[str]:
    if spec.split_file is not None:
        ids = [ln.strip() for ln in spec.split_file.read_text().splitlines()]
        return [i for i in ids if i]
    if spec.is_coco:
        return sorted(_coco_index(spec).images.keys())
    seg_dir = spec.root / "SegmentationClass"
    if not seg_dir.exists():
        raise MissingAnnotation(f"no split file and no {seg_dir}")
    return sorted(p.stem for p in seg_dir.glob("*.png"))


def load_dataset_image(spec: DatasetSpec, image_id: str) -> ImageRecord:
    if spec.is_coco:
        info = _coco_index(spec).images.get(image_id)
        if info is None:
            raise MissingAnnotation(f"image id {image_id!r} not in {spec.annotation_path()}")
        for candidate in (spec.root / "images" / info["file_name"], spec.root / info["file_name"]):
            if candidate.exists():
                pixels = np.asarray(Image.open(candidate).convert("RGB"), dtype=np.uint8)
                return ImageRecord(id=image_id, pixels=pixels)
        raise MissingAnnotation(f"image file {info['file_name']!r} not under {spec.root}")
    for ext in (".jpg", ".jpeg", ".png"):
        candidate = spec.root / "JPEGImages" / f"{image_id}{ext}"
        if candidate.exists():
            pixels = np.asarray(Image.open(candidate).convert("RGB"), dtype=np.uint8)
            return ImageRecord(id=image_id, pixels=pixels)
    raise MissingAnnotation(f"no image for id {image_id!r} under {spec.root / 'JPEGImages'}")


def load_ground_truth(spec: DatasetSpec, image_id: str) -> SegmentationMap:
    """Ground truth in dataset class space; VOC void (255) kept as ignore."""
    if spec.is_coco:
        return _load_coco_ground_truth(spec, image_id)
    path = spec.root / "SegmentationClass" / f"{image_id}.png"
    if not path.exists():
        raise MissingAnnotation(f"no VOC annotation {path}")
    img = Image.open(path)
    labels = np.asarray(img, dtype=np.int64)
    if labels.ndim != 2:
        raise MissingAnnotation(f"{path} is not a paletted label map")
    return SegmentationMap(labels=labels, palette=list(spec.classes))


def _load_coco_ground_truth(spec: DatasetSpec, image_id: str) -> SegmentationMap:
    index = _coco_index(spec)
    info = index.images.get(image_id)
    if info is None:
        raise MissingAnnotation(f"image id {image_id!r} not in {spec.annotation_path()}")
    height, width = int(info["height"]), int(info["width"])
    labels = np.zeros((height, width), dtype=np.int64)
    class_index = {name: i for i, name in enumerate(spec.classes)}

    for ann in index.by_image.get(image_id, []):
        name = index.category_names.get(int(ann["category_id"]))
        if name is None:
            continue
        if spec.remap:
            name = spec.remap.get(name, name)
        target = class_index.get(name)
        if target is None:
            continue
        mask = annotation_to_mask(ann.get("segmentation"), height, width)
        if mask.shape != (height, width):
            raise CorruptRLE(
                f"annotation mask {mask.shape} does not match image {height}x{width}"
            )
        labels[mask] = target
    return SegmentationMap(labels=labels, palette=list(spec.classes))
