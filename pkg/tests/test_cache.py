import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freeseg.backbones.cache import SHARED_ID, TensorCache
from freeseg.errors import CorruptEntry

shapes = st.lists(st.integers(1, 6), min_size=1, max_size=4)


@settings(max_examples=50, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**32 - 1))
def test_roundtrip_bitwise_exact(tmp_path_factory, shape, seed):
    cache = TensorCache(tmp_path_factory.mktemp("cache"))
    rng = np.random.default_rng(seed)
    tensor = rng.standard_normal(shape).astype(np.float32)
    cache.put("img", "t", tensor)
    back = cache.get("img", "t")
    assert back.dtype == np.float32
    assert back.shape == tensor.shape
    assert np.array_equal(
        back.view(np.uint32), tensor.view(np.uint32)
    ), "round-trip must be bitwise lossless"


def test_miss_returns_none(tmp_cache):
    assert tmp_cache.get("img", "nothing") is None
    assert tmp_cache.get_text(SHARED_ID, "nothing") is None


def test_corrupt_payload_detected(tmp_cache):
    tmp_cache.put("img", "t", np.zeros((2, 3), dtype=np.float32))
    path = tmp_cache.image_dir("img") / "t.bin"
    path.write_bytes(path.read_bytes()[:20])  # 2*3*4 = 24 bytes expected
    with pytest.raises(CorruptEntry):
        tmp_cache.get("img", "t")


def test_text_roundtrip(tmp_cache):
    tmp_cache.put_text("img", "caption_x", "a dog on the grass")
    assert tmp_cache.get_text("img", "caption_x") == "a dog on the grass"


def test_manifest_is_json_with_shapes(tmp_cache):
    tmp_cache.put("img", "t", np.zeros((4, 5), dtype=np.float32))
    manifest = json.loads((tmp_cache.image_dir("img") / "manifest.json").read_text())
    assert manifest["tensors"]["t"] == {"dtype": "float32", "shape": [4, 5]}


def test_unsafe_keys_rejected(tmp_cache):
    with pytest.raises(ValueError):
        tmp_cache.put("img", "../escape", np.zeros(1, dtype=np.float32))
    with pytest.raises(ValueError):
        tmp_cache.get("bad/id", "t")


def test_overwrite_replaces(tmp_cache):
    tmp_cache.put("img", "t", np.zeros(3, dtype=np.float32))
    tmp_cache.put("img", "t", np.ones(5, dtype=np.float32))
    assert np.array_equal(tmp_cache.get("img", "t"), np.ones(5, dtype=np.float32))


def test_concurrent_writes_to_one_image_id(tmp_cache):
    # writes to the same manifest are serialized: no lost updates
    from concurrent.futures import ThreadPoolExecutor

    def put(i):
        tmp_cache.put("img", f"k{i:02d}", np.full(4, i, dtype=np.float32))

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(put, range(32)))
    assert tmp_cache.tensor_keys("img") == [f"k{i:02d}" for i in range(32)]
    for i in range(32):
        assert np.array_equal(tmp_cache.get("img", f"k{i:02d}"),
                              np.full(4, i, dtype=np.float32))
