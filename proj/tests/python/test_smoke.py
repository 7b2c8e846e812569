import os
import pathlib

import pytest

import cirevl

MOCK = pathlib.Path(os.environ.get("CIREVL_MOCK_DATA_DIR", pathlib.Path(__file__).resolve().parents[2] / "data" / "mock"))


def test_hash_embed_and_cosine():
    assert cirevl.tokenize("A dog, on grass!") == ["a", "dog", "on", "grass"]
    ref = cirevl.hash_embed("a dog on grass", 64)
    tgt = cirevl.hash_embed("a dog on grass at night", 64)
    assert len(ref) == 64
    assert cirevl.cosine(ref, tgt) == pytest.approx(0.8164965809, abs=1e-9)


def test_zero_vector_raises():
    with pytest.raises(cirevl.CirevlError):
        cirevl.normalize([0.0, 0.0])


def test_index_top_k_and_subset():
    index = cirevl.GalleryIndex([("b", [1.0, 0.0]), ("a", [1.0, 0.0]), ("c", [0.0, 1.0])], "toy")
    assert len(index) == 3
    assert index.dim == 2
    top = index.top_k([2.0, 0.0], 2)
    assert [i for i, _ in top] == ["a", "b"]
    assert [i for i, _ in index.top_k([1.0, 0.0], 3, exclude={"a"})] == ["b", "c"]
    assert [i for i, _ in index.rank_subset([0.0, 1.0], ["a", "c"])] == ["c", "a"]


def test_metrics_and_prompt():
    ap = cirevl.average_precision_at_k(["A", "X", "B", "Y", "Z"], {"A", "B"}, 5)
    assert ap == pytest.approx(0.8333333333, abs=1e-9)
    assert cirevl.recall_at_k([["A", "X"], ["X", "A"]], [{"A"}, {"A"}], 1) == 0.5
    req = cirevl.build_reasoner_request("a dog on grass", "make it night-time")
    assert req.startswith(cirevl.DEFAULT_BASE_PROMPT)
    assert "Image Content: a dog on grass" in req.splitlines()
    assert cirevl.parse_edited_description("Edited Description: a dog at night") == ("a dog at night", False)
    assert len(cirevl.sha256_hex("x")) == 64
    assert cirevl.cache_key("caption", "m", "x") != cirevl.cache_key("caption", "n", "x")


def test_run_dataset(tmp_path):
    traces, summary = cirevl.run_dataset(str(MOCK / "dataset.json"), str(MOCK / "clients.json"),
                                         cache_dir=str(tmp_path / "cache"))
    assert len(traces) == 1
    assert traces[0]["ranking"]["ranking"][0]["image_id"] == "img2"
    assert summary["ok"] == 1
    assert summary["client_calls"]["embedder"] == 4
    _, warm = cirevl.run_dataset(str(MOCK / "dataset.json"), str(MOCK / "clients.json"),
                                 cache_dir=str(tmp_path / "cache"))
    assert warm["client_calls"] == {"captioner": 0, "reasoner": 0, "embedder": 0}
