"""Procedural backend: deterministic features/captions/embeddings, no weights.

Used to build the bundled replay cache and for demos on machines without the
model stack. Feature maps are concept-color similarity channels plus seeded
random color projections, so clustering recovers the colored regions; text
embeddings are unit vectors seeded by the phrase's head word, which makes a
keyword land exactly on its class prompt; image embeddings map the dominant
masked color to the matching concept's vector.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

from ..errors import BackendUnavailable
from .clients import Backend, image_content_key
from .features import FeatureMap, ImageRecord, resize_bilinear

_WORDS = re.compile(r"[A-Za-z]+")


def _head_word(text: str) -> str:
    tokens = _WORDS.findall(text.lower())
    return tokens[-1] if tokens else ""


def _seeded_unit(tag: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class SyntheticBackend(Backend):
    """Stand-in for the three frozen models.

    ``concepts`` maps a concept name (e.g. "bird") to its RGB color in the
    synthetic images; ``captions`` maps image ids to fixed caption strings.
    """

    def __init__(
        self,
        concepts: dict[str, tuple[int, int, int]],
        captions: dict[str, str],
        dim: int = 64,
        feature_channels: int = 12,
        seed: int = 7,
    ):
        self.concepts = {k: np.asarray(v, dtype=np.float64) for k, v in concepts.items()}
        self.captions = dict(captions)
        self.dim = dim
        self.feature_channels = feature_channels
        self.seed = seed

    # -- embedder ----------------------------------------------------------
    def embed_text(self, text: str) -> np.ndarray:
        return _seeded_unit(f"txt:{_head_word(text)}", self.dim)

    def embed_image(self, image: ImageRecord) -> np.ndarray:
        pixels = image.pixels.reshape(-1, 3).astype(np.float64)
        lit = pixels.max(axis=1) > 12  # ignore the black mask fill
        mean_rgb = pixels[lit].mean(axis=0) if lit.any() else pixels.mean(axis=0)
        names = sorted(self.concepts)
        gaps = [np.linalg.norm(mean_rgb - self.concepts[n]) for n in names]
        concept = names[int(np.argmin(gaps))]
        base = self.embed_text(concept)
        jitter = _seeded_unit(f"img:{image_content_key(image)}", self.dim)
        v = base + 0.05 * jitter
        return v / np.linalg.norm(v)

    # -- captioner ----------------------------------------------------------
    def caption(self, image: ImageRecord) -> str:
        if image.id not in self.captions:
            raise BackendUnavailable(f"synthetic backend has no caption for {image.id!r}")
        return self.captions[image.id]

    # -- feature extractor ---------------------------------------------------
    def fetch_maps(self, image, timestep, resolutions, include_attention):
        maps = []
        for res in sorted(resolutions):
            rgb = resize_bilinear(
                image.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0, res, res
            )
            sims = []
            for name in sorted(self.concepts):
                color = self.concepts[name] / 255.0
                d2 = ((rgb - color[:, None, None]) ** 2).sum(axis=0)
                sims.append(np.exp(-d2 / (2 * 0.12**2)))
            n_extra = max(self.feature_channels - len(sims), 0)
            rng = np.random.default_rng(self.seed + res)
            mixes = rng.standard_normal((n_extra, 3))
            extras = np.tanh(np.einsum("ec,chw->ehw", mixes, rgb))
            noise_rng = np.random.default_rng(
                int.from_bytes(
                    hashlib.sha256(
                        f"{image_content_key(image)}:{res}:{timestep}".encode()
                    ).digest()[:8],
                    "little",
                )
            )
            tensor = np.concatenate([np.stack(sims), extras], axis=0)
            tensor = tensor + 0.01 * noise_rng.standard_normal(tensor.shape)
            maps.append(FeatureMap(native_resolution=res, kind="feature", block=0,
                                   tensor=tensor))
            if include_attention:
                attn = np.stack(sims) ** 2
                attn = attn / (attn.sum(axis=0, keepdims=True) + 1e-9)
                maps.append(FeatureMap(native_resolution=res, kind="attention", block=0,
                                       tensor=attn))
        return maps
