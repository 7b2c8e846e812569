import json

from ._core import (
    DEFAULT_BASE_PROMPT,
    CirevlError,
    GalleryIndex,
    average_precision_at_k,
    build_reasoner_request,
    cache_key,
    cosine,
    hash_embed,
    normalize,
    parse_edited_description,
    recall_at_k,
    sha256_hex,
    tokenize,
)
from ._core import run_dataset as _run_dataset


def run_dataset(dataset, clients, mode="cirevl", k=50, cache_dir=None, deterministic=True):
    """Runs every query in `dataset`; returns (traces, summary) as plain dicts."""
    lines, summary = _run_dataset(str(dataset), str(clients), mode, k,
                                  None if cache_dir is None else str(cache_dir), deterministic)
    traces = [json.loads(line) for line in lines.splitlines() if line]
    return traces, json.loads(summary)


__all__ = [
    "DEFAULT_BASE_PROMPT",
    "CirevlError",
    "GalleryIndex",
    "average_precision_at_k",
    "build_reasoner_request",
    "cache_key",
    "cosine",
    "hash_embed",
    "normalize",
    "parse_edited_description",
    "recall_at_k",
    "run_dataset",
    "sha256_hex",
    "tokenize",
]
