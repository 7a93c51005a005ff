import numpy as np
import pytest

from clsum.corpus import BOS, EOS, LSEP, SPECIALS, Vocabulary
from clsum.decoding import (DecodeConfig, MalformedOutputError, beam_search, decode_corpus, greedy_decode,
                            length_penalty, masked_log_softmax, read_decodes, split_at_lsep, trigram_blocked,
                            vocab_mask, write_decodes)
from clsum.model import ModelConfig, Seq2SeqModel
from clsum.objectives import build_concat_target
from clsum.tensor import Tensor

VOCAB = Vocabulary(size_per_language=12)
CFG = ModelConfig(vocab_size=VOCAB.size, layers_enc=1, layers_dec=1, heads=2, d_model=16, d_ff=16)


def repeated_trigrams(seq):
    grams = [tuple(seq[i:i + 3]) for i in range(len(seq) - 2)]
    return len(grams) != len(set(grams))


def test_masks():
    b = vocab_mask(VOCAB, "B", "mclas")
    assert not b[list(VOCAB.a_range())].any() and b[list(VOCAB.b_range())].all() and b[EOS]
    a = vocab_mask(VOCAB, "A", "mclas")
    assert not a[EOS] and a[LSEP] and not a[list(VOCAB.b_range())].any()
    n = vocab_mask(VOCAB, "A", "ncls")
    np.testing.assert_array_equal(n, b)
    rng = np.random.default_rng(0)
    lp = masked_log_softmax(rng.standard_normal(VOCAB.size), a)
    assert abs(np.exp(lp[a]).sum() - 1.0) < 1e-12 and np.all(np.isneginf(lp[~a]))


def test_trigram_blocking():
    a, b, c, d = 10, 11, 12, 13
    assert trigram_blocked([BOS, a, b, c, d, b, c], d)
    assert not trigram_blocked([BOS, a, b, c, d, b, c], a)
    assert not trigram_blocked([BOS, a], b)
    # the segment restarts at the separator, so a trigram across or before it is not counted
    assert not trigram_blocked([BOS, a, b, c, LSEP, a, b], c)
    assert trigram_blocked([BOS, 5, LSEP, a, b, c, a, b], c)
    assert not trigram_blocked([BOS, a, b, c, a, b], EOS)


def test_length_penalty():
    assert all(length_penalty(n, 0.0) == 1.0 for n in range(1, 20))
    assert length_penalty(7, 1.0) == 2.0
    vals = [length_penalty(n, 0.6) for n in range(1, 30)]
    assert all(x < y for x, y in zip(vals, vals[1:]))


def test_split_at_lsep():
    assert split_at_lsep([BOS, 7, LSEP, 107, EOS]) == ([7], [107])
    assert split_at_lsep([BOS, LSEP, EOS]) == ([], [])
    with pytest.raises(MalformedOutputError) as err:
        split_at_lsep([BOS, 7, EOS])
    assert err.value.tokens == [BOS, 7, EOS]
    with pytest.raises(MalformedOutputError):
        split_at_lsep([BOS, LSEP, LSEP, EOS])
    rng = np.random.default_rng(1)
    for _ in range(20):
        sa = rng.integers(5, 17, size=rng.integers(0, 5)).tolist()
        sb = rng.integers(17, 29, size=rng.integers(0, 5)).tolist()
        assert split_at_lsep(build_concat_target(sa, sb).tokens) == (sa, sb)


@pytest.mark.parametrize("mode", ["mclas", "ncls", "ms"])
def test_beam_one_equals_greedy(mode):
    rng = np.random.default_rng(2)
    cfg = DecodeConfig(beam_size=1, trigram_block=False, max_len=12)
    for seed in range(5):
        m = Seq2SeqModel(CFG, seed=seed)
        doc = rng.integers(5, 17, size=8).tolist()
        r = beam_search(m, doc, mode, cfg, VOCAB)
        g = greedy_decode(m, doc, mode, VOCAB, max_len=12)
        assert r.tokens == g


def test_constraints_and_blocking_over_random_models():
    rng = np.random.default_rng(3)
    cfg = DecodeConfig(beam_size=3, max_len=20)
    for seed in range(8):
        m = Seq2SeqModel(CFG, seed=seed)
        doc = rng.integers(5, 17, size=8).tolist()
        for mode in ("mclas", "ncls", "ms"):
            r = beam_search(m, doc, mode, cfg, VOCAB)
            assert all(VOCAB.in_b(t) for t in r.sum_b)
            if r.sum_a is not None:
                assert all(VOCAB.in_a(t) for t in r.sum_a)
                assert not repeated_trigrams(r.sum_a)
            assert not repeated_trigrams(r.sum_b)


class StubModel:
    """Scripted next-token scores: ``table(prefix) -> logits``; the document is ignored."""

    def __init__(self, table, decoders=1):
        self.table = table
        self.config = ModelConfig(**{**CFG.to_dict(), "decoder_count": decoders})
        self.training = False

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def check_decoder(self, which):
        pass

    def encode(self, docs):
        return Tensor(np.zeros((1, 1, 4))), np.ones((1, 1, 1, 1), dtype=bool)

    def decode(self, memory, mask, prefixes, which=1):
        rows = [self.table(list(p)) for p in prefixes]
        out = np.zeros((len(rows), len(prefixes[0]), VOCAB.size))
        out[:, -1, :] = rows
        return Tensor(out)


def flat_logits(prefer=None, eos=-30.0):
    row = np.zeros(VOCAB.size)
    row[EOS] = eos
    if prefer is not None:
        row[prefer] = 5.0
    return row


def test_truncation_when_nothing_finishes():
    r = beam_search(StubModel(lambda p: flat_logits()), [5], "ncls", DecodeConfig(beam_size=2, max_len=5), VOCAB)
    assert r.truncated and r.tokens[-1] != EOS and len(r.tokens) == 5
    r = beam_search(StubModel(lambda p: flat_logits()), [5], "mclas", DecodeConfig(beam_size=2, max_len=4), VOCAB)
    assert r.truncated and r.tokens == [BOS, LSEP, VOCAB.b_start, VOCAB.b_start]


def test_ties_break_to_smaller_sequence():
    r = beam_search(StubModel(lambda p: flat_logits(eos=0.0 if len(p) > 2 else -30.0)), [5], "ncls",
                    DecodeConfig(beam_size=3, max_len=8), VOCAB)
    b0 = VOCAB.b_start
    assert r.tokens == [BOS, b0, b0, EOS]


def test_length_penalty_prefers_longer_finished_hypothesis():
    # EOS at step one costs about ln 2; the long path is near-certain after its first token
    def table(p):
        row = np.full(VOCAB.size, -40.0)
        if len(p) == 1:
            row[EOS] = 0.0
            row[VOCAB.b_start] = 0.0
        elif len(p) < 5:
            row[VOCAB.b_start + len(p)] = 10.0
        else:
            row[EOS] = 10.0
        return row

    r = beam_search(StubModel(table), [5], "ncls", DecodeConfig(beam_size=2, length_penalty_alpha=1.0), VOCAB)
    assert len(r.tokens) == 6 and r.tokens[-1] == EOS
    assert r.score == pytest.approx(r.logprob / length_penalty(5, 1.0))


def test_unconstrained_decoding_can_leave_language():
    def prefer_a(p):
        return flat_logits(prefer=VOCAB.a_start + len(p) % 5, eos=-30.0 if len(p) < 4 else 30.0)

    free = beam_search(StubModel(prefer_a), [5], "ncls", DecodeConfig(language_constraint=False), VOCAB)
    assert any(VOCAB.in_a(t) for t in free.sum_b)
    fenced = beam_search(StubModel(prefer_a), [5], "ncls", DecodeConfig(), VOCAB)
    assert all(VOCAB.in_b(t) for t in fenced.sum_b)


def test_score_on_real_model():
    r = beam_search(Seq2SeqModel(CFG, seed=3), [5, 6, 7, 5, 6], "mclas", DecodeConfig(max_len=25), VOCAB)
    assert r.logprob <= 0.0
    assert r.score == pytest.approx(r.logprob / length_penalty(len(r.tokens) - 1, 1.0))


def test_decoding_is_deterministic(tmp_path):
    m = Seq2SeqModel(CFG, seed=5)
    docs = [[5, 6, 7, 8, 5, 6], [9, 10, 9, 11, 12]]
    a = write_decodes(decode_corpus(m, docs, "mclas", DecodeConfig(), VOCAB), tmp_path / "a.jsonl")
    b = write_decodes(decode_corpus(m, docs, "mclas", DecodeConfig(), VOCAB), tmp_path / "b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    recs = read_decodes(a)
    assert [r["doc_id"] for r in recs] == ["0", "1"]
    assert set(recs[0]) == {"doc_id", "sum_a", "sum_b", "score", "truncated"}


def test_ncls_on_two_decoder_model_uses_decoder_two():
    two = Seq2SeqModel(ModelConfig(**{**CFG.to_dict(), "decoder_count": 2}), seed=6)
    doc = [5, 6, 7, 5]
    a = beam_search(two, doc, "ncls", DecodeConfig(), VOCAB)
    b = beam_search(two, doc, "ncls", DecodeConfig(), VOCAB, which=2)
    assert a.tokens == b.tokens


def test_attention_capture():
    m = Seq2SeqModel(CFG, seed=7)
    r = beam_search(m, [5, 6, 7, 8], "mclas", DecodeConfig(max_len=10), VOCAB, capture_attention=True)
    assert len(r.attention) == CFG.layers_dec * CFG.heads * 2
    for rec in r.attention:
        np.testing.assert_allclose(rec.weights.sum(-1), 1.0, atol=1e-9)
