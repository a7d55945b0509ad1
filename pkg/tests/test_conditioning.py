import numpy as np
import pytest
import torch

from ldmkit.conditioning import (
    MAX_TOKENS,
    NULL_CLASS_ID,
    BpeTokenizer,
    Caption,
    ClassEmbedder,
    ClassLabel,
    TextEncoder,
    TokenSequence,
    build_caption,
    class_label,
    parse_caption_levels,
)

CORPUS = [
    "the specimen presents a teal staining background with rounded nodular aggregates",
    "the specimen presents a crimson staining background with elongated nodular aggregates",
    "margins appear clear of atypical structures and no necrosis is identified",
    "final interpretation: amber background tint with rounded nodules",
]


@pytest.fixture(scope="module")
def tokenizer():
    return BpeTokenizer(vocab_size=512).fit(CORPUS)


class TestTokenizer:
    def test_empty_string(self, tokenizer):
        assert tokenizer.tokenize("").tokens == ()

    def test_round_trip_on_corpus(self, tokenizer):
        for text in CORPUS:
            seq = tokenizer.tokenize(text)
            assert tokenizer.detokenize(seq) == text
            assert tokenizer.tokenize(tokenizer.detokenize(seq)).tokens == seq.tokens

    def test_ids_below_vocab(self, tokenizer):
        seq = tokenizer.tokenize(CORPUS[0] + " unusual zebra text!")
        assert all(0 <= t < tokenizer.effective_vocab_size for t in seq.tokens)

    def test_truncation_cap(self, tokenizer):
        long_text = "unrepeatable" + "".join(chr(0x21 + (i * 7) % 90) for i in range(400))
        seq = tokenizer.tokenize(long_text)
        assert len(seq.tokens) == MAX_TOKENS
        assert seq.truncated

    def test_learns_compression(self, tokenizer):
        text = CORPUS[0]
        assert len(tokenizer.tokenize(text).tokens) < len(text.encode("utf-8"))

    def test_deterministic(self):
        t1 = BpeTokenizer(vocab_size=400).fit(CORPUS)
        t2 = BpeTokenizer(vocab_size=400).fit(CORPUS)
        assert t1.merges_ == t2.merges_

    def test_merges_file_round_trip(self, tokenizer, tmp_path):
        path = tmp_path / "merges.txt"
        tokenizer.save(path)
        loaded = BpeTokenizer.load(path)
        assert loaded.merges_ == tokenizer.merges_
        text = "teal staining background"
        assert loaded.tokenize(text).tokens == tokenizer.tokenize(text).tokens

    def test_sequence_length_invariant(self):
        with pytest.raises(ValueError):
            TokenSequence(tokens=tuple(range(MAX_TOKENS + 1)))


class TestCaptions:
    def test_quoted_template(self):
        assert build_caption(0.9, 0.2, "S").rendered == "High tumor; low til; S"

    def test_generalized_template(self):
        assert build_caption(0.2, 0.9, "S").rendered == "Low tumor; high til; S"

    def test_boundary_tie_is_high(self):
        assert build_caption(0.5, 0.5, "S").rendered == "High tumor; high til; S"

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            build_caption(1.2, 0.5, "S")
        with pytest.raises(ValueError):
            build_caption(0.5, -0.1, "S")

    def test_rendering_injective_in_levels(self):
        renderings = {
            build_caption(tp, lp, "same summary").rendered
            for tp in (0.1, 0.9)
            for lp in (0.1, 0.9)
        }
        assert len(renderings) == 4

    def test_invalid_levels_rejected(self):
        with pytest.raises(ValueError):
            Caption(tumor_level="Medium", til_level="Low", summary="S")


class TestClassLabel:
    @pytest.mark.parametrize("tp,lp,expected", [
        (0.2, 0.2, 0), (0.2, 0.9, 1), (0.9, 0.2, 2), (0.9, 0.9, 3),
        (0.5, 0.2, 2), (0.2, 0.5, 1), (0.5, 0.5, 3), (0.0, 1.0, 1),
    ])
    def test_mapping(self, tp, lp, expected):
        assert class_label(tp, lp).id == expected

    def test_names(self):
        assert ClassLabel(0).name == "Low Tumor + Low TIL"
        assert ClassLabel(3).name == "High Tumor + High TIL"

    def test_caption_and_class_agree(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            tp, lp = rng.uniform(size=2)
            caption = build_caption(tp, lp, "summary text")
            assert parse_caption_levels(caption.rendered).id == class_label(tp, lp).id

    def test_invalid_id(self):
        with pytest.raises(ValueError):
            ClassLabel(4)


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return TextEncoder(vocab_size=512, d_model=32, n_layers=2, n_heads=2).eval()


@pytest.fixture(scope="module")
def embedder():
    torch.manual_seed(1)
    return ClassEmbedder(d_model=16)


class TestTextEncoder:
    def test_output_length_matches_tokens(self, encoder):
        rng = np.random.default_rng(1)
        for length in (1, 76, 77, 78, 154):
            ids = rng.integers(0, 512, size=length).tolist()
            assert encoder.encode_long(ids).vectors.shape == (length, 32)

    def test_short_equals_single_segment(self, encoder):
        rng = np.random.default_rng(2)
        for _ in range(10):
            length = int(rng.integers(1, 78))
            ids = rng.integers(0, 512, size=length).tolist()
            long_form = encoder.encode_long(ids).vectors
            single = encoder.encode_single_segment(ids).vectors
            np.testing.assert_allclose(long_form, single, atol=1e-6)

    def test_cyclical_position_reuse(self, encoder):
        # token index 77 uses the positional vector of index 0
        ids = torch.zeros(1, 78, dtype=torch.long)
        emb = encoder.embed_tokens(ids)
        np.testing.assert_allclose(emb[0, 77].detach(), emb[0, 0].detach(), atol=0)

    def test_causal_prefix_invariance(self, encoder):
        rng = np.random.default_rng(3)
        base = rng.integers(0, 512, size=120).tolist()
        variant = list(base)
        for i in range(90, 120):
            variant[i] = int(rng.integers(0, 512))
        out_base = encoder.encode_long(base).vectors
        out_variant = encoder.encode_long(variant).vectors
        np.testing.assert_allclose(out_base[:77], out_variant[:77], atol=1e-6)

    def test_overlength_rejected(self, encoder):
        with pytest.raises(ValueError):
            encoder.encode_long(list(range(155)))
        with pytest.raises(ValueError):
            encoder.encode_single_segment(list(range(100)))

    def test_empty_sequence(self, encoder):
        assert encoder.encode_long([]).vectors.shape == (0, 32)


class TestClassEmbedder:
    def test_lookup_deterministic(self, embedder):
        np.testing.assert_array_equal(embedder.embed_class(2), embedder.embed_class(2))

    def test_distinct_rows(self, embedder):
        vectors = [embedder.embed_class(i) for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not np.allclose(vectors[i], vectors[j])

    def test_null_is_reserved_slot(self, embedder):
        null = embedder.null_embedding()
        np.testing.assert_array_equal(null, embedder.embed_class(NULL_CLASS_ID))
        for i in range(4):
            assert not np.allclose(null, embedder.embed_class(i))

    def test_invalid_id(self, embedder):
        with pytest.raises(ValueError):
            embedder.embed_class(7)
