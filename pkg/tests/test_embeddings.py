from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagqa.config import ModelConfig
from tagqa.core.tensor import Tensor
from tagqa.embeddings import (
    ALPHABET,
    PHOC_DIM,
    SEG_OBJ_LABEL,
    SEG_OCR_WORD,
    SEG_PRIMARY,
    SPECIALS,
    N_BIGRAMS,
    EmbeddingTables,
    Vocabulary,
    embed_answer_extended,
    embed_objects,
    embed_ocr,
    extended_text_features,
    init_embedding_params,
    lexical_embed,
    phoc,
    relative_bbox,
    top_bigrams,
)
from tagqa.scene import BBox
from tagqa.synth import LEXICON


def phoc_oracle(word, bigrams):
    """Exhaustive interval-overlap PHOC in exact rational arithmetic."""
    n = len(word)
    bits = []

    def block(level, grams, symbols, width):
        out = np.zeros(level * width)
        for r in range(level):
            reg = (Fraction(r, level), Fraction(r + 1, level))
            for start, stop, sym in grams:
                if sym not in symbols:
                    continue
                lo, hi = Fraction(start, n), Fraction(stop, n)
                overlap = max(Fraction(0), min(hi, reg[1]) - max(lo, reg[0]))
                if overlap >= (hi - lo) / 2:
                    out[r * width + symbols.index(sym)] = 1.0
        return out

    unigrams = [(i, i + 1, c) for i, c in enumerate(word)]
    for level in (2, 3, 4, 5):
        bits.append(block(level, unigrams, list(ALPHABET), len(ALPHABET)))
    pairs = [(i, i + 2, word[i : i + 2]) for i in range(n - 1)]
    bits.append(block(2, pairs, list(bigrams[:N_BIGRAMS]), N_BIGRAMS))
    return np.concatenate(bits)


@pytest.fixture(scope="module")
def lexicon_bigrams():
    return top_bigrams(LEXICON)


def test_phoc_length_and_binary(lexicon_bigrams):
    v = phoc("street", lexicon_bigrams)
    assert v.shape == (PHOC_DIM,) == (604,)
    assert set(np.unique(v)) <= {0.0, 1.0}


def test_phoc_two_letter_word_level_two():
    v = phoc("ab")
    level2 = v[: 2 * 36]
    assert level2.sum() == 2
    assert level2[ALPHABET.index("a")] == 1 and level2[36 + ALPHABET.index("b")] == 1


def test_phoc_single_letter_follows_overlap_rule():
    # [0,1) covers half of each level-2 region only; finer regions cover < half
    v = phoc("a")
    assert v.sum() == 2
    np.testing.assert_array_equal(v, phoc_oracle("a", ()))


@pytest.mark.parametrize("word", ["a", "ab", "abc", "hello", "x9", "zzzzzzzzz"])
def test_phoc_matches_oracle_examples(word, lexicon_bigrams):
    np.testing.assert_array_equal(phoc(word, lexicon_bigrams), phoc_oracle(word, lexicon_bigrams))


@given(st.text(alphabet=ALPHABET, min_size=1, max_size=14))
def test_phoc_matches_oracle_property(word):
    bigrams = ("ab", "th", "he", "in", "00")
    np.testing.assert_array_equal(phoc(word, bigrams), phoc_oracle(word, bigrams))


@pytest.mark.parametrize("bad", ["", "Hello", "a b", "é"])
def test_phoc_rejects_invalid(bad):
    with pytest.raises(ValueError):
        phoc(bad)


def test_top_bigrams_ties_lexicographic():
    assert top_bigrams(["abab", "ba", "cd"], k=3) == ("ab", "ba", "cd")


def test_lexical_embed_unit_and_deterministic():
    a = lexical_embed("poster")
    assert np.linalg.norm(a) == pytest.approx(1.0)
    np.testing.assert_array_equal(a, lexical_embed("poster"))
    # shared 3-grams make related spellings closer than unrelated ones
    assert a @ lexical_embed("posters") > a @ lexical_embed("qwkz")


def test_relative_bbox():
    np.testing.assert_allclose(relative_bbox(BBox(10, 20, 30, 40), 100, 200), [0.1, 0.1, 0.3, 0.2])


def test_vocabulary_specials_first_and_file_roundtrip(tmp_path, small_splits):
    vocab = Vocabulary.build(small_splits.train)
    assert tuple(vocab.itos[:4]) == SPECIALS
    assert vocab.id_of("never-seen") == vocab.unk_id
    path = tmp_path / "v.txt"
    vocab.save(path)
    first = path.read_text().splitlines()[0]
    assert first == "<pad>\t0"
    assert (tmp_path / "v.bigrams").exists()
    assert Vocabulary.load(path) == vocab


def test_vocabulary_sides(small_splits):
    q_only = Vocabulary.build(small_splits.train, sides=("question",))
    answers = {qa.answer for s in small_splits.train for qa in s.qa_pairs}
    questions = {w for s in small_splits.train for qa in s.qa_pairs for w in qa.question_words}
    assert not (answers - questions) & set(q_only.itos)


def test_extended_text_layout():
    vocab = Vocabulary(["what", "sign"])
    f = extended_text_features(["what", "zz"], ["sign"], ["foo", "bar"], vocab, k_cap=8, lex_dim=16)
    assert f.length == 5
    assert list(f.segments[:5]) == [SEG_PRIMARY, SEG_PRIMARY, SEG_OBJ_LABEL, SEG_OCR_WORD, SEG_OCR_WORD]
    assert f.ids[1] == vocab.unk_id and f.ids[5] == vocab.pad_id
    np.testing.assert_array_equal(f.lexical[5:], 0.0)
    short = extended_text_features(["a"] * 30, [], [], vocab, k_cap=40, lex_dim=16, max_primary=20)
    assert short.length == 20


def test_embedding_shapes_and_zero_padding(scene):
    cfg = ModelConfig(d=16, heads=2, k_cap=12, m_cap=3, n_cap=5)
    vocab = Vocabulary(["what", "sign"])
    tables = EmbeddingTables.from_params(init_embedding_params(cfg, len(vocab), np.random.default_rng(0)))
    ans, k = embed_answer_extended(["alpha"], ["sign"], ["alpha", "beta", "gamma"], tables, vocab, cfg)
    obj, m = embed_objects(scene, tables, cfg)
    ocr, n = embed_ocr(scene, tables, cfg)
    assert ans.shape == (12, 16) and obj.shape == (3, 16) and ocr.shape == (5, 16)
    assert (k, m, n) == (5, 1, 3)
    for x, used in ((ans, k), (obj, m), (ocr, n)):
        assert np.all(x.data[used:] == 0.0)
        assert np.all(np.abs(x.data[:used]).sum(axis=1) > 0)


def test_init_is_seeded_normal():
    cfg = ModelConfig(d=32, heads=2)
    a = init_embedding_params(cfg, 50, np.random.default_rng(5))
    b = init_embedding_params(cfg, 50, np.random.default_rng(5))
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert a["emb.word"].data.std() == pytest.approx(0.02, rel=0.1)
    assert isinstance(a["emb.ocr_proj.w"], Tensor)
