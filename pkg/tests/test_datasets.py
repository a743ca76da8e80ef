import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freeseg.errors import CorruptRLE, MissingAnnotation
from freeseg.evaluation.datasets import (
    annotation_to_mask,
    builtin_class_list,
    builtin_supercategory_map,
    decode_compressed_rle,
    decode_rle,
    encode_compressed_rle,
    encode_rle,
    list_image_ids,
    load_dataset_spec,
    load_ground_truth,
    load_dataset_image,
    rasterize_polygons,
)


def test_rle_hand_decoded_example():
    # runs [3,2,5] on a 1x10 canvas: pixels 3..4 are foreground
    mask = decode_rle([3, 2, 5], 1, 10)
    assert mask.shape == (1, 10)
    assert np.flatnonzero(mask[0]).tolist() == [3, 4]


def test_rle_column_major():
    # 2x2 canvas, runs [1,2,1]: flat column-major [0,1,1,0]
    mask = decode_rle([1, 2, 1], 2, 2)
    assert mask[0, 0] == False and mask[1, 0] == True
    assert mask[0, 1] == True and mask[1, 1] == False


def test_rle_sum_mismatch():
    with pytest.raises(CorruptRLE):
        decode_rle([3, 2], 1, 10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 12), w=st.integers(1, 12))
def test_rle_roundtrip_identity(seed, h, w):
    rng = np.random.default_rng(seed)
    mask = rng.random((h, w)) > 0.5
    assert np.array_equal(decode_rle(encode_rle(mask), h, w), mask)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 12), w=st.integers(1, 12))
def test_compressed_rle_roundtrip(seed, h, w):
    rng = np.random.default_rng(seed)
    mask = rng.random((h, w)) > 0.5
    counts = encode_rle(mask)
    assert decode_compressed_rle(encode_compressed_rle(counts)) == counts


def test_polygon_rectangle_fill():
    mask = rasterize_polygons([[1, 1, 4, 1, 4, 3, 1, 3]], 6, 6)
    assert mask[1:4, 1:5].all()  # boundary inclusive
    assert not mask[0].any() and not mask[:, 0].any()
    assert not mask[4:].any() and not mask[:, 5].any()


def test_annotation_to_mask_dispatch():
    rle = {"size": [1, 10], "counts": [3, 2, 5]}
    assert np.array_equal(annotation_to_mask(rle, 1, 10), decode_rle([3, 2, 5], 1, 10))
    compressed = {"size": [1, 10], "counts": encode_compressed_rle([3, 2, 5])}
    assert np.array_equal(annotation_to_mask(compressed, 1, 10), decode_rle([3, 2, 5], 1, 10))


def test_voc_ground_truth(fixtures_dir):
    spec = load_dataset_spec("voc21", fixtures_dir / "dataset_voc",
                             split_file=fixtures_dir / "dataset_voc" / "split.txt")
    gt = load_ground_truth(spec, "bird")
    values = set(np.unique(gt.labels).tolist())
    assert values == {0, 3, 255}  # background, bird, void stripe
    assert (gt.labels[0] == 255).all()


def test_voc_missing_annotation(fixtures_dir):
    spec = load_dataset_spec("voc21", fixtures_dir / "dataset_voc")
    with pytest.raises(MissingAnnotation):
        load_ground_truth(spec, "nonexistent")


def test_list_ids_split(fixtures_dir):
    spec = load_dataset_spec("voc21", fixtures_dir / "dataset_voc",
                             split_file=fixtures_dir / "dataset_voc" / "split.txt")
    assert list_image_ids(spec) == ["bird", "dog"]


def test_coco_ground_truth(fixtures_dir):
    spec = load_dataset_spec("coco81", fixtures_dir / "dataset_coco")
    classes = builtin_class_list("coco81")
    gt = load_ground_truth(spec, "1")  # bird image
    bird_idx = classes.index("bird")
    plant_idx = classes.index("potted plant")
    values = set(np.unique(gt.labels).tolist())
    assert bird_idx in values and plant_idx in values
    gt2 = load_ground_truth(spec, "2")  # dog image: raw RLE + compressed RLE
    dog_idx = classes.index("dog")
    ball_idx = classes.index("sports ball")
    values2 = set(np.unique(gt2.labels).tolist())
    assert dog_idx in values2 and ball_idx in values2
    image = load_dataset_image(spec, "2")
    assert image.pixels.shape[:2] == gt2.labels.shape


def test_coco27_remap_after_rasterization(fixtures_dir):
    spec = load_dataset_spec("coco27", fixtures_dir / "dataset_coco")
    classes = builtin_class_list("coco27")
    gt = load_ground_truth(spec, "2")
    animal_idx = classes.index("animal")
    sports_idx = classes.index("sports")
    values = set(np.unique(gt.labels).tolist())
    assert animal_idx in values and sports_idx in values


def test_supercategory_map_spot_checks():
    remap = builtin_supercategory_map()
    assert remap["dog"] == "animal"
    assert remap["couch"] == "furniture"
    assert remap["pizza"] == "food"
    assert len(remap) == 80


def test_overlapping_annotations_later_wins(tmp_path):
    blob = {
        "images": [{"id": 1, "file_name": "x.png", "height": 4, "width": 4}],
        "categories": [{"id": 1, "name": "person"}, {"id": 18, "name": "dog"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1,
             "segmentation": {"size": [4, 4], "counts": [0, 16]}},  # full canvas
            {"id": 2, "image_id": 1, "category_id": 18,
             "segmentation": {"size": [4, 4], "counts": [8, 8]}},  # right half
        ],
    }
    (tmp_path / "annotations.json").write_text(json.dumps(blob))
    spec = load_dataset_spec("coco81", tmp_path)
    classes = builtin_class_list("coco81")
    gt = load_ground_truth(spec, "1")
    person, dog = classes.index("person"), classes.index("dog")
    assert (gt.labels[:, :2] == person).all()
    assert (gt.labels[:, 2:] == dog).all()


def test_voc_c_requires_split(fixtures_dir):
    with pytest.raises(ValueError):
        load_dataset_spec("voc-c", fixtures_dir / "dataset_voc")
    spec = load_dataset_spec("voc-c", fixtures_dir / "dataset_voc",
                             split_file=fixtures_dir / "dataset_voc" / "split.txt")
    assert spec.classes == builtin_class_list("voc21")


def test_custom_dataset_with_voc_layout(fixtures_dir, tmp_path):
    classes_file = tmp_path / "classes.txt"
    classes_file.write_text("unlabeled\nbird\ndog\n")
    spec = load_dataset_spec("custom", fixtures_dir / "dataset_voc",
                             classes_file=classes_file)
    assert spec.classes == ["unlabeled", "bird", "dog"]
    assert list_image_ids(spec) == ["bird", "dog"]
    with pytest.raises(ValueError):
        load_dataset_spec("custom", fixtures_dir / "dataset_voc")  # classes required


def test_class_list_sizes():
    assert len(builtin_class_list("voc21")) == 21
    assert len(builtin_class_list("coco81")) == 81
    assert len(builtin_class_list("coco27")) == 28  # unlabeled + 27 supercategories
