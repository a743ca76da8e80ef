"""On-disk tensor cache: raw float32 binaries plus one JSON manifest per image.

Layout: ``<root>/<image_id>/manifest.json`` and ``<root>/<image_id>/<key>.bin``.
Payloads are float32, row-major, little-endian, so they stay readable from any
language. Manifest rewrites go through an atomic rename; writers for the same
image id are serialized with an in-process lock.
"""
from __future__ import annotations

import json
import os
import re
import threading
from pathlib import Path

import numpy as np

from ..errors import CorruptEntry

SHARED_ID = "_shared"  # namespace for content-addressed entries (embeddings, captions)

_SAFE_KEY = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9._-]*$")

_locks_guard = threading.Lock()
_locks: dict[str, threading.Lock] = {}


def _lock_for(path: Path) -> threading.Lock:
    key = str(path)
    with _locks_guard:
        if key not in _locks:
            _locks[key] = threading.Lock()
        return _locks[key]


def _check_key(key: str) -> None:
    if not _SAFE_KEY.match(key):
        raise ValueError(f"cache key {key!r} is not filesystem-safe")


class TensorCache:
    """Read/write access to one cache root.

    Reads are lock-free (manifest reads are single atomic file reads); writes
    to one image id are serialized. ``get``/``get_text`` return ``None`` on a
    miss instead of raising.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def image_dir(self, image_id: str) -> Path:
        _check_key(image_id)
        return self.root / image_id

    def _manifest_path(self, image_id: str) -> Path:
        return self.image_dir(image_id) / "manifest.json"

    def _read_manifest(self, image_id: str) -> dict:
        path = self._manifest_path(image_id)
        if not path.exists():
            return {"tensors": {}, "strings": {}}
        with open(path, "r") as fh:
            manifest = json.load(fh)
        manifest.setdefault("tensors", {})
        manifest.setdefault("strings", {})
        return manifest

    def _write_manifest(self, image_id: str, manifest: dict) -> None:
        path = self._manifest_path(image_id)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        os.replace(tmp, path)

    def put(self, image_id: str, key: str, tensor: np.ndarray) -> None:
        _check_key(key)
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        dir_ = self.image_dir(image_id)
        dir_.mkdir(parents=True, exist_ok=True)
        with _lock_for(self._manifest_path(image_id)):
            with open(dir_ / f"{key}.bin", "wb") as fh:
                fh.write(arr.astype("<f4").tobytes(order="C"))
            manifest = self._read_manifest(image_id)
            manifest["tensors"][key] = {"dtype": "float32", "shape": list(arr.shape)}
            self._write_manifest(image_id, manifest)

    def get(self, image_id: str, key: str) -> np.ndarray | None:
        _check_key(key)
        manifest = self._read_manifest(image_id)
        entry = manifest["tensors"].get(key)
        if entry is None:
            return None
        path = self.image_dir(image_id) / f"{key}.bin"
        if not path.exists():
            return None
        payload = path.read_bytes()
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if len(payload) != expected:
            raise CorruptEntry(
                f"{image_id}/{key}: payload is {len(payload)} bytes, "
                f"manifest shape {shape} needs {expected}"
            )
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()

    def put_text(self, image_id: str, key: str, text: str) -> None:
        _check_key(key)
        dir_ = self.image_dir(image_id)
        dir_.mkdir(parents=True, exist_ok=True)
        with _lock_for(self._manifest_path(image_id)):
            manifest = self._read_manifest(image_id)
            manifest["strings"][key] = text
            self._write_manifest(image_id, manifest)

    def get_text(self, image_id: str, key: str) -> str | None:
        _check_key(key)
        return self._read_manifest(image_id)["strings"].get(key)

    def tensor_keys(self, image_id: str) -> list[str]:
        return sorted(self._read_manifest(image_id)["tensors"].keys())

    def delete(self, image_id: str, key: str) -> None:
        _check_key(key)
        with _lock_for(self._manifest_path(image_id)):
            manifest = self._read_manifest(image_id)
            manifest["tensors"].pop(key, None)
            manifest["strings"].pop(key, None)
            self._write_manifest(image_id, manifest)
        path = self.image_dir(image_id) / f"{key}.bin"
        if path.exists():
            path.unlink()
