"""End-to-end segmentation of one image: features -> clusters -> masks ->
labels -> refined map. Pure orchestration; all stages live in their modules."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import assignment, clustering, refine, vocabulary
from .backbones import clients
from .backbones.features import ImageRecord, FeatureStack
from .clustering import BinaryMask, ClusterResult
from .assignment import MaskLabel, SegmentationMap
from .config import PipelineConfig
from .visualize import save_cluster_png, save_label_png, save_overlay_png


@dataclass
class PipelineResult:
    image: ImageRecord
    caption: str | None
    candidates: vocabulary.CandidateClassSet
    stack: FeatureStack
    cluster: ClusterResult
    masks: list[BinaryMask]  # image resolution, one per cluster
    mask_labels: list[MaskLabel]
    coarse: SegmentationMap
    refined: SegmentationMap


def _candidate_set(
    image: ImageRecord,
    backend: clients.Backend,
    config: PipelineConfig,
    dataset_classes: list[str] | None,
) -> tuple[str | None, vocabulary.CandidateClassSet]:
    if config.candidate_mode == "open":
        caption = clients.caption_image(backend, image)
        entities = vocabulary.extract_entities(caption)
        return caption, vocabulary.open_vocab_candidates(entities)
    if dataset_classes is None:
        raise ValueError("closed-vocabulary mode needs a dataset class list")
    if not config.caption_filter:
        return None, vocabulary.all_class_candidates(dataset_classes)
    caption = clients.caption_image(backend, image)
    entities = vocabulary.extract_entities(caption)
    candidates = vocabulary.match_candidates(
        entities, dataset_classes, lambda text: clients.embed_text(backend, text).values,
        prompt_template=config.prompt_template,
    )
    return caption, candidates


def segment_image(
    image: ImageRecord,
    backend: clients.Backend,
    config: PipelineConfig,
    dataset_classes: list[str] | None = None,
) -> PipelineResult:
    """Run the full pipeline on one image.

    ``dataset_classes`` drives closed-vocabulary runs (index 0 unlabeled); in
    open mode the classes come from the caption itself.
    """
    caption, candidates = _candidate_set(image, backend, config, dataset_classes)

    stack = clients.extract_features(
        backend,
        image,
        timestep=config.timestep,
        resolutions=set(config.resolutions),
        include_attention=config.include_attention,
        grid_size=config.grid_size,
    )
    cluster = clustering.cluster_features(
        stack,
        k=config.k,
        seed=config.seed,
        max_iters=config.kmeans_max_iters,
        tol=config.kmeans_tol,
        standardize=config.standardize_features,
    )
    grid_masks = clustering.binarize(cluster, config.grid_size)
    masks = [
        clustering.upsample_nearest(m, image.height, image.width) for m in grid_masks
    ]

    class_vectors = None
    if len(candidates.dataset_classes) >= 2:
        class_vectors = assignment.class_text_vectors(
            backend, candidates, config.prompt_template
        )

    labels: list[MaskLabel] = []
    for mask_id, mask in enumerate(masks):
        if not mask.grid.any() or class_vectors is None:
            labels.append(MaskLabel(mask_id=mask_id, class_index=0, nearest_class=0,
                                    distance=float("inf")))
            continue
        masked = assignment.apply_mask(image, mask, fill=config.mask_fill)
        labels.append(
            assignment.classify_mask(
                masked, candidates, backend,
                mask_id=mask_id,
                class_vectors=class_vectors,
                prompt_template=config.prompt_template,
            )
        )

    palette = list(candidates.dataset_classes)
    coarse = assignment.compose(
        list(zip(masks, labels)), image.height, image.width, palette=palette
    )
    refined = _refine(image, coarse, config)
    refined.palette = palette
    return PipelineResult(
        image=image,
        caption=caption,
        candidates=candidates,
        stack=stack,
        cluster=cluster,
        masks=masks,
        mask_labels=labels,
        coarse=coarse,
        refined=refined,
    )


def _refine(image: ImageRecord, coarse: SegmentationMap, config: PipelineConfig) -> SegmentationMap:
    active = [int(v) for v in np.unique(coarse.labels)]
    if config.refinement == "none" or len(active) < 2:
        return SegmentationMap(labels=coarse.labels.copy(), palette=coarse.palette)
    if config.refinement == "pamr":
        unary = refine.labels_to_unary(coarse, active, config.crf.unary_confidence)
        return refine.pamr(image, unary,
                           iterations=config.pamr.iterations,
                           dilations=config.pamr.dilations)
    if config.crf_per_region:
        return refine.refine_per_region(image, coarse, config.crf)
    unary = refine.labels_to_unary(coarse, active, config.crf.unary_confidence)
    return refine.dense_crf(image, unary, config.crf)


def write_outputs(result: PipelineResult, out_dir: str | Path,
                  dump_masked_images: bool = False) -> list[Path]:
    """Write the five per-image artifacts; returns the paths.

    ``dump_masked_images`` additionally writes each mask's masked-image PNG
    (debug aid for inspecting what the embedder saw)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.image.id
    label_path = out / f"{stem}_labels.png"
    overlay_path = out / f"{stem}_overlay.png"
    cluster_path = out / f"{stem}_clusters.png"
    masks_path = out / f"{stem}_masks.json"
    caption_path = out / f"{stem}_caption.txt"

    save_label_png(result.refined.labels, label_path)
    save_overlay_png(result.image.pixels, result.refined.labels, overlay_path)
    cluster_grid = result.cluster.assignments.reshape(
        result.stack.grid_size, result.stack.grid_size
    )
    # same nearest-neighbor index mapping the masks were upsampled with
    rows = (np.arange(result.image.height) * cluster_grid.shape[0]) // result.image.height
    cols = (np.arange(result.image.width) * cluster_grid.shape[1]) // result.image.width
    save_cluster_png(cluster_grid[np.ix_(rows, cols)], cluster_path)

    records = [
        {
            "mask_id": ml.mask_id,
            "class_index": ml.class_index,
            "class_name": result.candidates.dataset_classes[ml.class_index],
            "nearest_class": ml.nearest_class,
            "nearest_name": result.candidates.dataset_classes[ml.nearest_class],
            "distance": None if not np.isfinite(ml.distance) else ml.distance,
            "pixels": int(result.masks[ml.mask_id].grid.sum()),
        }
        for ml in result.mask_labels
    ]
    masks_path.write_text(json.dumps(records, indent=1, sort_keys=True))
    caption_path.write_text((result.caption or "") + "\n")
    written = [label_path, overlay_path, cluster_path, masks_path, caption_path]

    if dump_masked_images:
        for mask_id, mask in enumerate(result.masks):
            if not mask.grid.any():
                continue
            masked = assignment.apply_mask(result.image, mask)
            path = out / f"{stem}_mask{mask_id:02d}.png"
            Image.fromarray(masked.pixels).save(path)
            written.append(path)
    return written
