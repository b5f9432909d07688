"""Python access to the sti_atlas C++ core."""

from ._core import (
    Error,
    Vocabulary,
    __version__,
    evaluate,
    fallback_embed,
    kmeans,
    match_term,
    read_vectors,
    reconstruct_abstract,
    run,
    share_percent,
    tokenize,
    write_vectors,
)

__all__ = [
    "Error",
    "Vocabulary",
    "__version__",
    "evaluate",
    "fallback_embed",
    "kmeans",
    "match_term",
    "read_vectors",
    "reconstruct_abstract",
    "run",
    "share_percent",
    "tokenize",
    "write_vectors",
]
