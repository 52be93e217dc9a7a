import string

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ems.corpus import (
    MAX_LEN,
    PAD_ID,
    UNK_ID,
    EncodedCorpus,
    ParallelCorpus,
    SentencePair,
    Vocabulary,
    build_vocab,
    encode_sentence,
    load_parallel_tsv,
    make_batches,
    normalize,
)
from ems.errors import ConfigError, EmptyCorpusError, InvalidInputError, ParseError


def write(tmp_path, text, name="c.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_single_line(tmp_path):
    corpus = load_parallel_tsv(write(tmp_path, "en\tde\thello world\thallo welt\n"))
    assert corpus.pairs == (SentencePair("en", "de", "hello world", "hallo welt"),)
    assert corpus.language_set == {"en", "de"}


def test_load_skips_comments_and_blank_lines(tmp_path):
    text = "# header\n\nen\tde\ta\tb\nde\tfr\tc\td\n"
    corpus = load_parallel_tsv(write(tmp_path, text))
    assert [p.src_text for p in corpus] == ["a", "c"]
    assert corpus.language_set == {"en", "de", "fr"}


def test_empty_file_is_an_error(tmp_path):
    with pytest.raises(EmptyCorpusError):
        load_parallel_tsv(write(tmp_path, ""))


def test_three_fields_reports_line_number(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_parallel_tsv(write(tmp_path, "en\tde\ta\tb\n# c\nen\tde\tonly three\n"))
    assert exc.value.line_no == 3
    assert "line 3" in str(exc.value)


def test_same_language_pair_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_parallel_tsv(write(tmp_path, "en\ten\ta\tb\n"))


def test_pair_invariants():
    with pytest.raises(InvalidInputError):
        SentencePair("en", "en", "a", "b")
    with pytest.raises(InvalidInputError):
        SentencePair("en", "de", "   ", "b")


@pytest.mark.parametrize(
    "raw, expected",
    [("Hello  World ", "hello world"), ("", ""), ("ÉCOLE", "école"), ("\ta\n\nb ", "a b")],
)
def test_normalize(raw, expected):
    assert normalize(raw) == expected


@given(st.text())
def test_normalize_idempotent(text):
    once = normalize(text)
    assert normalize(once) == once
    assert once == once.strip()
    assert "  " not in once


def test_vocab_required_entries(small_corpus):
    corpus = ParallelCorpus.from_pairs(p for p in small_corpus if {p.src_lang, p.tgt_lang} == {"en", "de"})
    vocab = build_vocab(corpus, 100)
    assert vocab.id_to_token[PAD_ID] == "<pad>"
    assert vocab.id_to_token[UNK_ID] == "<unk>"
    assert set(vocab.lang_token_ids) == {"en", "de"}
    assert vocab.token_to_id["<2en>"] == vocab.lang_id("en")
    assert all(i < vocab.d_vcb for i in vocab.token_to_id.values())
    assert vocab.d_vcb <= 100


def test_vocab_deterministic(small_corpus, tmp_path):
    a, b = build_vocab(small_corpus, 100), build_vocab(small_corpus, 100)
    a.save(tmp_path / "a.txt")
    b.save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_most_frequent_word_gets_first_content_id(small_corpus):
    # Hand count over the 5 lines: "the" x4, "der" x2, "hund" x2, every other word x1.
    vocab = build_vocab(small_corpus, 200)
    first_content = 2 + len(small_corpus.language_set)
    assert vocab.id_to_token[first_content] == "the"
    assert {vocab.id_to_token[first_content + 1], vocab.id_to_token[first_content + 2]} == {"der", "hund"}
    assert vocab.token_to_id["der"] < vocab.token_to_id["hund"]  # tie -> lexicographic


def test_vocab_too_small(small_corpus):
    # 2 specials + 3 languages + 1 content unit
    with pytest.raises(ConfigError):
        build_vocab(small_corpus, 5)
    assert build_vocab(small_corpus, 6).d_vcb == 6


def test_vocab_file_round_trip(small_vocab, tmp_path):
    path = tmp_path / "v.txt"
    small_vocab.save(path)
    assert path.read_text(encoding="utf-8").startswith(f"EMSVOCAB 1 {small_vocab.d_vcb}\n")
    loaded = Vocabulary.load(path)
    assert loaded.id_to_token == small_vocab.id_to_token
    assert loaded.lang_token_ids == small_vocab.lang_token_ids


def test_vocab_bad_header(tmp_path):
    p = write(tmp_path, "VOCAB 2\n<pad>\n", "v.txt")
    with pytest.raises(ParseError):
        Vocabulary.load(p)


def test_round_trip_every_token(small_vocab):
    for tok, i in small_vocab.token_to_id.items():
        assert small_vocab.id_to_token[i] == tok


def test_encode_known_word(small_vocab):
    assert encode_sentence(small_vocab, "the") == [small_vocab.token_to_id["the"]]


def test_encode_truncates_to_120(small_vocab):
    ids = encode_sentence(small_vocab, " ".join(["the"] * 200))
    assert len(ids) == MAX_LEN == 120


def test_encode_unknown_symbols(small_vocab):
    assert encode_sentence(small_vocab, "§§ ¶") == [UNK_ID] * 3


def test_encode_empty():
    vocab = Vocabulary(("<pad>", "<unk>", "<2en>", "a"))
    assert encode_sentence(vocab, "") == []


def test_encode_never_emits_pad_or_language_tokens(small_vocab):
    ids = encode_sentence(small_vocab, "<2en> the <pad> cat")
    specials = {PAD_ID, *small_vocab.lang_token_ids.values()}
    assert not specials & set(ids)


def test_encode_subword_fallback():
    # unknown word segmented into known pieces by greedy longest match
    vocab = Vocabulary(("<pad>", "<unk>", "<2en>", "ab", "a", "b", "c"))
    assert encode_sentence(vocab, "abcab") == [3, 6, 3]
    assert encode_sentence(vocab, "abz") == [3, UNK_ID]


def test_batch_sizes(small_corpus, small_vocab):
    corpus = ParallelCorpus.from_pairs(list(small_corpus) * 2)
    sizes = [b.size for b in make_batches(corpus, small_vocab, 4, seed=3)]
    assert sizes == [4, 4, 2]


def test_batches_deterministic(small_corpus, small_vocab):
    a = make_batches(small_corpus, small_vocab, 2, seed=11)
    b = make_batches(small_corpus, small_vocab, 2, seed=11)
    assert [x.indices for x in a] == [x.indices for x in b]
    for x, y in zip(a, b):
        assert torch.equal(x.src_ids, y.src_ids) and torch.equal(x.tgt_mask, y.tgt_mask)


def test_batch_size_one_rejected(small_corpus, small_vocab):
    with pytest.raises(ConfigError):
        make_batches(small_corpus, small_vocab, 1, seed=0)


def test_empty_corpus_cannot_batch(small_vocab):
    with pytest.raises(EmptyCorpusError):
        make_batches(ParallelCorpus(()), small_vocab, 2, seed=0)


words = st.text(alphabet=string.ascii_lowercase[:6], min_size=1, max_size=6)
sentences = st.lists(words, min_size=1, max_size=20).map(" ".join)
pairs = st.builds(
    SentencePair,
    st.sampled_from(["en", "de"]),
    st.just("fr"),
    sentences,
    sentences,
)


@settings(max_examples=40, deadline=None)
@given(st.lists(pairs, min_size=2, max_size=25), st.integers(2, 7), st.integers(0, 2**31), st.integers(1, 15))
def test_batch_invariants(pair_list, batch_size, seed, max_len):
    corpus = ParallelCorpus.from_pairs(pair_list)
    vocab = build_vocab(corpus, 40)
    enc = EncodedCorpus(corpus, vocab, max_len)
    batches = enc.batches(batch_size, seed)
    seen = []
    for b in batches:
        seen.extend(b.indices)
        for ids, mask, side in ((b.src_ids, b.src_mask, 0), (b.tgt_ids, b.tgt_mask, 1)):
            m = mask.long()
            # left-aligned: once a row hits padding it stays padded
            assert torch.all(m[:, 1:] <= m[:, :-1])
            assert torch.all(ids[~mask] == PAD_ID)
            assert torch.all((ids[mask] > 0) & (ids[mask] < vocab.d_vcb))
            for r, idx in enumerate(b.indices):
                assert int(m[r].sum()) == len(enc.encoded[idx][side]) <= max_len
        assert b.src_lang_ids.tolist() == [vocab.lang_id(corpus.pairs[i].src_lang) for i in b.indices]
    assert sorted(seen) == list(range(len(corpus)))
