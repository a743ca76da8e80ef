"""Layered pipeline configuration: dataclass defaults < YAML file < CLI flags.

The defaults are the reference configuration of the full pipeline: timestep 0,
feature resolution 16 on a 32x32 grid, K=4 clusters, closed-vocabulary
candidates, black mask fill, CRF refinement.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .refine import CrfParams, PamrParams

CACHE_ENV_VAR = "FREESEG_CACHE"


@dataclass
class PipelineConfig:
    timestep: int = 0
    resolutions: tuple[int, ...] = (16,)
    grid_size: int = 32
    k: int = 4
    seed: int = 0
    include_attention: bool = False
    candidate_mode: str = "closed"  # closed | open
    caption_filter: bool = True  # off: every class is a candidate (stage-ablation baseline)
    mask_fill: str = "black"  # black | mean | crop
    refinement: str = "crf"  # crf | pamr | none
    crf: CrfParams = field(default_factory=CrfParams)
    pamr: PamrParams = field(default_factory=PamrParams)
    crf_per_region: bool = False
    standardize_features: bool = True
    prompt_template: str = "a photo of a {}"
    kmeans_max_iters: int = 300
    kmeans_tol: float = 1e-4
    cache_root: str | None = None

    def __post_init__(self):
        self.resolutions = tuple(int(r) for r in self.resolutions)
        if self.candidate_mode not in ("closed", "open"):
            raise ValueError(f"candidate_mode must be closed|open, got {self.candidate_mode!r}")
        if self.mask_fill not in ("black", "mean", "crop"):
            raise ValueError(f"mask_fill must be black|mean|crop, got {self.mask_fill!r}")
        if self.refinement not in ("crf", "pamr", "none"):
            raise ValueError(f"refinement must be crf|pamr|none, got {self.refinement!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")

    def to_dict(self) -> dict:
        blob = dataclasses.asdict(self)
        blob["resolutions"] = list(self.resolutions)
        blob["pamr"]["dilations"] = list(self.pamr.dilations)
        return blob

    def resolved_cache_root(self) -> str | None:
        return os.environ.get(CACHE_ENV_VAR) or self.cache_root


def config_from_dict(blob: dict) -> PipelineConfig:
    blob = dict(blob)
    crf = blob.pop("crf", {})
    pamr = blob.pop("pamr", {})
    if isinstance(pamr, dict) and "dilations" in pamr:
        pamr["dilations"] = tuple(pamr["dilations"])
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(blob) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(
        crf=CrfParams(**crf) if isinstance(crf, dict) else crf,
        pamr=PamrParams(**pamr) if isinstance(pamr, dict) else pamr,
        **blob,
    )


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional YAML file plus flat override keys.

    Overrides win over the file; ``crf.iterations``-style dotted keys reach
    into the nested parameter blocks.
    """
    blob: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must be a mapping")
        blob.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            head, tail = key.split(".", 1)
            blob.setdefault(head, {})
            if not isinstance(blob[head], dict):
                raise ValueError(f"cannot override {key}: {head} is not a mapping")
            blob[head][tail] = value
        else:
            blob[key] = value
    return config_from_dict(blob)
