"""Clients for the three frozen external models, plus cache-backed adapters.

Three roles: a diffusion feature extractor, an image captioner, and an
image-text embedder. ``ReplayBackend`` serves all three purely from the
on-disk cache (the mode every test runs in); ``ModelBackend`` is the
in-process adapter around the real frozen models; ``CachingBackend`` wraps
any backend with write-through caching so a run can be replayed offline
afterwards.

Cache key scheme:
  features    <image_id>/feat_t{t}_r{res}_b{block}.bin   (attn_ for attention)
  captions    _shared/manifest strings, key caption_{hash(image)}
  embeddings  _shared/emb_img_{hash(image)}.bin, _shared/emb_txt_{hash(text)}.bin
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from ..errors import BackendUnavailable, CorruptEntry, EmptyCaption, ShapeMismatch
from .cache import SHARED_ID, TensorCache
from .features import FeatureMap, FeatureStack, ImageRecord, build_stack

_FEATURE_KEY = re.compile(r"^(feat|attn)_t(\d+)_r(\d+)_b(\d+)$")
_KIND_FROM_PREFIX = {"feat": "feature", "attn": "attention"}
_PREFIX_FROM_KIND = {"feature": "feat", "attention": "attn"}


def image_content_key(image: ImageRecord) -> str:
    h = hashlib.sha256()
    h.update(f"{image.height}x{image.width}".encode())
    h.update(image.pixels.tobytes())
    return h.hexdigest()[:16]


def text_content_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def feature_key(kind: str, timestep: int, resolution: int, block: int) -> str:
    return f"{_PREFIX_FROM_KIND[kind]}_t{timestep}_r{resolution}_b{block:02d}"


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm embedding shared by the image and text encoders."""

    values: np.ndarray
    source: str  # "image" | "text"

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def _normalize(values: np.ndarray, source: str) -> EmbeddingVector:
    v = np.asarray(values, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        raise BackendUnavailable(f"{source} embedder returned a degenerate vector")
    return EmbeddingVector(values=v / norm, source=source)


class Backend:
    """Interface over the three frozen models. Subclasses implement the raw calls."""

    def fetch_maps(
        self, image: ImageRecord, timestep: int, resolutions: set[int], include_attention: bool
    ) -> list[FeatureMap]:
        raise NotImplementedError

    def caption(self, image: ImageRecord) -> str:
        raise NotImplementedError

    def embed_image(self, image: ImageRecord) -> np.ndarray:
        raise NotImplementedError

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError


class ReplayBackend(Backend):
    """Serves features, captions and embeddings from the cache only.

    A miss is a hard error (BackendUnavailable): replay mode exists precisely
    so downstream code never silently falls back to model inference.
    """

    def __init__(self, cache: TensorCache):
        self.cache = cache

    def fetch_maps(self, image, timestep, resolutions, include_attention):
        found: dict[int, list[FeatureMap]] = {r: [] for r in resolutions}
        for key in self.cache.tensor_keys(image.id):
            m = _FEATURE_KEY.match(key)
            if not m:
                continue
            prefix, t, res, block = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
            if t != timestep or res not in resolutions:
                continue
            if prefix == "attn" and not include_attention:
                continue
            tensor = self.cache.get(image.id, key)
            found[res].append(
                FeatureMap(native_resolution=res, kind=_KIND_FROM_PREFIX[prefix], block=block, tensor=tensor)
            )
        missing = [
            r for r, maps in found.items() if not any(m.kind == "feature" for m in maps)
        ]
        if missing:
            raise BackendUnavailable(
                f"no cached features for image {image.id!r} at t={timestep}, "
                f"resolution(s) {sorted(missing)}"
            )
        if include_attention and not any(
            m.kind == "attention" for maps in found.values() for m in maps
        ):
            raise BackendUnavailable(
                f"attention maps requested but none cached for image {image.id!r} at t={timestep}"
            )
        return [m for maps in found.values() for m in maps]

    def caption(self, image):
        text = self.cache.get_text(SHARED_ID, f"caption_{image_content_key(image)}")
        if text is None:
            raise BackendUnavailable(f"no cached caption for image {image.id!r}")
        return text

    def embed_image(self, image):
        vec = self.cache.get(SHARED_ID, f"emb_img_{image_content_key(image)}")
        if vec is None:
            raise BackendUnavailable(f"no cached image embedding for {image.id!r}")
        return vec

    def embed_text(self, text):
        vec = self.cache.get(SHARED_ID, f"emb_txt_{text_content_key(text)}")
        if vec is None:
            raise BackendUnavailable(f"no cached text embedding for {text!r}")
        return vec


class CachingBackend(Backend):
    """Cache-first reads, write-through on miss. Corrupt entries are recomputed."""

    def __init__(self, inner: Backend, cache: TensorCache):
        self.inner = inner
        self.cache = cache
        self._replay = ReplayBackend(cache)

    def fetch_maps(self, image, timestep, resolutions, include_attention):
        try:
            return self._replay.fetch_maps(image, timestep, resolutions, include_attention)
        except (BackendUnavailable, CorruptEntry):
            pass
        maps = self.inner.fetch_maps(image, timestep, resolutions, include_attention)
        for m in maps:
            key = feature_key(m.kind, timestep, m.native_resolution, m.block)
            self.cache.put(image.id, key, m.tensor)
        return maps

    def caption(self, image):
        try:
            return self._replay.caption(image)
        except BackendUnavailable:
            pass
        text = self.inner.caption(image)
        self.cache.put_text(SHARED_ID, f"caption_{image_content_key(image)}", text)
        return text

    def embed_image(self, image):
        try:
            return self._replay.embed_image(image)
        except (BackendUnavailable, CorruptEntry):
            pass
        vec = self.inner.embed_image(image)
        self.cache.put(SHARED_ID, f"emb_img_{image_content_key(image)}", np.asarray(vec))
        return vec

    def embed_text(self, text):
        try:
            return self._replay.embed_text(text)
        except (BackendUnavailable, CorruptEntry):
            pass
        vec = self.inner.embed_text(text)
        self.cache.put(SHARED_ID, f"emb_txt_{text_content_key(text)}", np.asarray(vec))
        return vec


class ModelBackend(Backend):
    """In-process adapter around the real frozen models.

    Needs the optional model stack (``pip install freeseg[models]``) and
    downloaded weights. Everything runs in inference mode; nothing is ever
    fine-tuned. Which U-Net blocks contribute maps (and which attention
    tensors count as attention maps) is adapter configuration, not pipeline
    logic.
    """

    def __init__(
        self,
        diffusion_model: str = "runwayml/stable-diffusion-v1-5",
        caption_model: str = "Salesforce/blip-image-captioning-base",
        embed_model: str = "openai/clip-vit-base-patch32",
        device: str = "cpu",
        input_size: int = 512,
    ):
        self.diffusion_model = diffusion_model
        self.caption_model = caption_model
        self.embed_model = embed_model
        self.device = device
        self.input_size = input_size
        self._torch = None
        self._unet = None
        self._vae = None
        self._text_cond = None
        self._captioner = None
        self._clip = None

    def _require_torch(self):
        if self._torch is None:
            try:
                import torch
            except ImportError as exc:
                raise BackendUnavailable(
                    "model backend requested but torch is not installed; "
                    "install the [models] extra or run against a cache"
                ) from exc
            self._torch = torch
        return self._torch

    def _load_diffusion(self):
        if self._unet is None:
            torch = self._require_torch()
            try:
                from diffusers import AutoencoderKL, UNet2DConditionModel
                from transformers import CLIPTextModel, CLIPTokenizer
            except ImportError as exc:
                raise BackendUnavailable("diffusers/transformers not installed") from exc
            self._unet = UNet2DConditionModel.from_pretrained(self.diffusion_model, subfolder="unet")
            self._vae = AutoencoderKL.from_pretrained(self.diffusion_model, subfolder="vae")
            tokenizer = CLIPTokenizer.from_pretrained(self.diffusion_model, subfolder="tokenizer")
            encoder = CLIPTextModel.from_pretrained(self.diffusion_model, subfolder="text_encoder")
            with torch.no_grad():
                tokens = tokenizer("", return_tensors="pt", padding="max_length",
                                   max_length=tokenizer.model_max_length, truncation=True)
                self._text_cond = encoder(tokens.input_ids)[0]
            self._unet.to(self.device).eval()
            self._vae.to(self.device).eval()
            self._text_cond = self._text_cond.to(self.device)

    def fetch_maps(self, image, timestep, resolutions, include_attention):
        self._load_diffusion()
        torch = self._torch
        from PIL import Image as PILImage

        pil = PILImage.fromarray(image.pixels).resize((self.input_size, self.input_size))
        x = torch.from_numpy(np.asarray(pil, dtype=np.float32) / 127.5 - 1.0)
        x = x.permute(2, 0, 1)[None].to(self.device)

        captured: list[tuple[int, np.ndarray]] = []

        def hook(_module, _inputs, output):
            out = output[0] if isinstance(output, tuple) else output
            if hasattr(out, "ndim") and out.ndim == 4 and out.shape[-1] == out.shape[-2]:
                captured.append((int(out.shape[-1]), out.detach().cpu().numpy()[0]))

        handles = []
        for blocks in (self._unet.down_blocks, [self._unet.mid_block], self._unet.up_blocks):
            for block in blocks:
                for res in getattr(block, "resnets", []) or []:
                    handles.append(res.register_forward_hook(hook))
        try:
            with torch.no_grad():
                latents = self._vae.encode(x).latent_dist.mode() * self._vae.config.scaling_factor
                t = torch.tensor([timestep], device=self.device)
                self._unet(latents, t, encoder_hidden_states=self._text_cond)
        finally:
            for h in handles:
                h.remove()

        maps, counters = [], {}
        for res, tensor in captured:
            if res not in resolutions:
                continue
            block = counters.get(res, 0)
            counters[res] = block + 1
            maps.append(FeatureMap(native_resolution=res, kind="feature", block=block,
                                   tensor=tensor.astype(np.float64)))
        missing = [r for r in resolutions if all(m.native_resolution != r for m in maps)]
        if missing:
            raise ShapeMismatch(f"diffusion backbone produced no maps at resolution(s) {missing}")
        return maps

    def caption(self, image):
        if self._captioner is None:
            try:
                from transformers import pipeline
            except ImportError as exc:
                raise BackendUnavailable("transformers not installed") from exc
            self._captioner = pipeline("image-to-text", model=self.caption_model, device=self.device)
        from PIL import Image as PILImage

        out = self._captioner(PILImage.fromarray(image.pixels))
        return out[0]["generated_text"].strip()

    def _load_clip(self):
        if self._clip is None:
            try:
                from transformers import CLIPModel, CLIPProcessor
            except ImportError as exc:
                raise BackendUnavailable("transformers not installed") from exc
            model = CLIPModel.from_pretrained(self.embed_model).to(self.device).eval()
            processor = CLIPProcessor.from_pretrained(self.embed_model)
            self._clip = (model, processor)
        return self._clip

    def embed_image(self, image):
        torch = self._require_torch()
        model, processor = self._load_clip()
        from PIL import Image as PILImage

        inputs = processor(images=PILImage.fromarray(image.pixels), return_tensors="pt").to(self.device)
        with torch.no_grad():
            vec = model.get_image_features(**inputs)
        return vec[0].cpu().numpy()

    def embed_text(self, text):
        torch = self._require_torch()
        model, processor = self._load_clip()
        inputs = processor(text=[text], return_tensors="pt", padding=True).to(self.device)
        with torch.no_grad():
            vec = model.get_text_features(**inputs)
        return vec[0].cpu().numpy()


def extract_features(
    backend: Backend,
    image: ImageRecord,
    timestep: int = 0,
    resolutions: set[int] = frozenset({16}),
    include_attention: bool = False,
    grid_size: int = 32,
) -> FeatureStack:
    """Fetch backbone maps for one image and assemble the clustering matrix."""
    if timestep < 0:
        raise ValueError("timestep must be >= 0")
    resolutions = set(int(r) for r in resolutions)
    if not resolutions:
        raise ValueError("at least one resolution is required")
    maps = backend.fetch_maps(image, timestep, resolutions, include_attention)
    for m in maps:
        m.validate()
        if m.native_resolution not in resolutions:
            raise ShapeMismatch(
                f"backend returned resolution {m.native_resolution}, requested {sorted(resolutions)}"
            )
    return build_stack(image.id, maps, grid_size=grid_size, timestep=timestep)


def caption_image(backend: Backend, image: ImageRecord) -> str:
    text = backend.caption(image)
    if not text or not text.strip():
        raise EmptyCaption(f"captioner returned an empty caption for {image.id!r}")
    return text


def embed_image(backend: Backend, image: ImageRecord) -> EmbeddingVector:
    return _normalize(backend.embed_image(image), "image")


def embed_text(backend: Backend, text: str) -> EmbeddingVector:
    return _normalize(backend.embed_text(text), "text")
