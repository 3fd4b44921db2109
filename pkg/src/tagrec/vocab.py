"""Tag vocabulary: frequency filtering, stable ordering, serialization.

A tag is rare iff its corpus-wide count is strictly below the threshold
theta; rare tags are dropped from the label space. Surviving tags are ordered
by descending count with lexicographic tie-breaks, and that order defines the
classifier's output indices, so it must be identical across runs.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

VOCAB_FORMAT_VERSION = 1


class VocabError(ValueError):
    """Invalid vocabulary configuration or serialized form."""


class EmptyLabelSpaceError(VocabError):
    """Every tag fell below the rare-tag threshold."""


@dataclass(frozen=True)
class TagVocabulary:
    """Ordered label space with the counts and threshold that produced it."""

    tags: tuple[str, ...]
    counts: tuple[int, ...]
    theta: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tags)})

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index

    def to_json(self) -> str:
        payload = {
            "format_version": VOCAB_FORMAT_VERSION,
            "theta": self.theta,
            "tags": [{"tag": t, "count": c} for t, c in zip(self.tags, self.counts)],
        }
        return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "TagVocabulary":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise VocabError(f"vocabulary file is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or "tags" not in payload or "theta" not in payload:
            raise VocabError("vocabulary file missing 'tags' or 'theta'")
        if payload.get("format_version") != VOCAB_FORMAT_VERSION:
            raise VocabError(f"unsupported vocabulary format_version {payload.get('format_version')!r}")
        tags = []
        counts = []
        for entry in payload["tags"]:
            if not (isinstance(entry, dict) and isinstance(entry.get("tag"), str) and isinstance(entry.get("count"), int)):
                raise VocabError(f"malformed tag entry {entry!r}")
            tags.append(entry["tag"])
            counts.append(entry["count"])
        if len(set(tags)) != len(tags):
            raise VocabError("duplicate tag in vocabulary file")
        return cls(tags=tuple(tags), counts=tuple(counts), theta=int(payload["theta"]))

    def content_hash(self) -> str:
        """sha256 of the canonical JSON form; checkpoints pin this."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def build_tag_vocab(posts: Iterable, theta: int) -> TagVocabulary:
    """Count tags over the full corpus and keep those with count >= theta.

    Counting happens before any train/test split so the label space does not
    depend on the split. An empty surviving set is fatal.
    """
    if theta < 1:
        raise VocabError(f"theta must be >= 1, got {theta}")
    counts: Counter = Counter()
    for post in posts:
        counts.update(post.tags)
    kept = sorted((t for t, c in counts.items() if c >= theta), key=lambda t: (-counts[t], t))
    if not kept:
        raise EmptyLabelSpaceError(
            f"no tag reaches the threshold theta={theta} (max observed count "
            f"{max(counts.values()) if counts else 0})"
        )
    return TagVocabulary(tags=tuple(kept), counts=tuple(counts[t] for t in kept), theta=theta)


def filter_posts(posts: Sequence, vocab: TagVocabulary) -> list:
    """Strip out-of-vocabulary tags from each post; drop posts left tagless.

    Post order and each post's surviving tag order are preserved. Returns new
    post objects; inputs are not mutated.
    """
    kept = []
    for post in posts:
        surviving = tuple(t for t in post.tags if t in vocab)
        if surviving:
            kept.append(replace(post, tags=surviving))
    return kept
