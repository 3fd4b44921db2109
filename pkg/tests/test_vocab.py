"""Tag vocabulary: threshold boundary, ordering, filtering, serialization."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_post
from tagrec.vocab import EmptyLabelSpaceError, TagVocabulary, VocabError, build_tag_vocab, filter_posts


def posts_with_counts(counts: dict[str, int]) -> list:
    """One single-tag post per occurrence."""
    posts = []
    pid = 0
    for tag, count in counts.items():
        for _ in range(count):
            posts.append(make_post(pid, (tag,)))
            pid += 1
    return posts


class TestThreshold:
    def test_boundary_count_50_kept_49_dropped(self):
        """Rarity is count < theta: exactly-at-threshold tags survive."""
        posts = posts_with_counts({"kept": 50, "dropped": 49})
        vocab = build_tag_vocab(posts, theta=50)
        assert vocab.tags == ("kept",)
        assert vocab.counts == (50,)

    def test_theta_one_keeps_everything(self):
        posts = posts_with_counts({"a": 1, "b": 2})
        vocab = build_tag_vocab(posts, theta=1)
        assert set(vocab.tags) == {"a", "b"}

    def test_all_rare_is_fatal(self):
        posts = posts_with_counts({"a": 3, "b": 2})
        with pytest.raises(EmptyLabelSpaceError, match="theta=50"):
            build_tag_vocab(posts, theta=50)

    def test_theta_below_one_rejected(self):
        with pytest.raises(VocabError, match="theta"):
            build_tag_vocab([], theta=0)

    def test_counts_cover_full_corpus_before_any_split(self):
        posts = posts_with_counts({"a": 5})
        vocab = build_tag_vocab(posts, theta=5)
        assert vocab.counts == (5,)


class TestOrdering:
    def test_descending_count_then_lexicographic(self):
        posts = posts_with_counts({"zeta": 3, "beta": 5, "alpha": 3, "gamma": 4})
        vocab = build_tag_vocab(posts, theta=1)
        assert vocab.tags == ("beta", "gamma", "alpha", "zeta")

    def test_index_matches_tag_order(self):
        posts = posts_with_counts({"x": 2, "y": 3})
        vocab = build_tag_vocab(posts, theta=1)
        assert vocab.index == {"y": 0, "x": 1}
        assert "y" in vocab and "nope" not in vocab


class TestFiltering:
    def test_out_of_vocab_tags_stripped_posts_dropped(self):
        vocab = TagVocabulary(tags=("python",), counts=(50,), theta=50)
        posts = [
            make_post(1, ("python", "rare-tag")),
            make_post(2, ("rare-tag",)),
            make_post(3, ("python",)),
        ]
        kept = filter_posts(posts, vocab)
        assert [p.id for p in kept] == [1, 3]
        assert kept[0].tags == ("python",)

    def test_original_tag_order_preserved(self):
        vocab = TagVocabulary(tags=("b", "a"), counts=(2, 2), theta=1)
        kept = filter_posts([make_post(1, ("a", "zz", "b"))], vocab)
        assert kept[0].tags == ("a", "b")

    def test_inputs_not_mutated(self):
        vocab = TagVocabulary(tags=("a",), counts=(1,), theta=1)
        post = make_post(1, ("a", "b"))
        filter_posts([post], vocab)
        assert post.tags == ("a", "b")


class TestSerialization:
    def test_round_trip(self):
        posts = posts_with_counts({"python": 60, "pandas": 51})
        vocab = build_tag_vocab(posts, theta=50)
        clone = TagVocabulary.from_json(vocab.to_json())
        assert clone == vocab
        assert clone.index == vocab.index

    def test_content_hash_tracks_content(self):
        a = TagVocabulary(tags=("x", "y"), counts=(3, 2), theta=1)
        b = TagVocabulary(tags=("x", "y"), counts=(3, 2), theta=1)
        c = TagVocabulary(tags=("y", "x"), counts=(3, 2), theta=1)
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != c.content_hash()

    def test_rejects_malformed_payloads(self):
        with pytest.raises(VocabError):
            TagVocabulary.from_json("[]")
        with pytest.raises(VocabError, match="format_version"):
            TagVocabulary.from_json('{"theta":1,"tags":[]}')
        with pytest.raises(VocabError, match="duplicate"):
            TagVocabulary.from_json(
                '{"format_version":1,"theta":1,"tags":[{"tag":"a","count":2},{"tag":"a","count":1}]}'
            )


@settings(max_examples=40, deadline=None)
@given(
    st.dictionaries(
        st.text(alphabet="abcdefgh", min_size=1, max_size=4),
        st.integers(min_value=1, max_value=80),
        min_size=1,
        max_size=12,
    ),
    st.integers(min_value=1, max_value=60),
)
def test_vocab_membership_matches_threshold(counts, theta):
    posts = posts_with_counts(counts)
    survivors = {t for t, c in counts.items() if c >= theta}
    if not survivors:
        with pytest.raises(EmptyLabelSpaceError):
            build_tag_vocab(posts, theta=theta)
        return
    vocab = build_tag_vocab(posts, theta=theta)
    assert set(vocab.tags) == survivors
    ordered = sorted(survivors, key=lambda t: (-counts[t], t))
    assert list(vocab.tags) == ordered
