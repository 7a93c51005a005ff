"""Walk through the synthetic corpus and the three training targets."""
import numpy as np

from clsum.corpus import CorpusSizes, ScenarioSpec, Vocabulary, generate_corpus, salient_summary, translate_tokens
from clsum.model import ModelConfig, Seq2SeqModel
from clsum.objectives import build_concat_target, loss_mclas, loss_ncls

vocab = Vocabulary(size_per_language=40)  # ids 5..44 are language A, 45..84 language B
print("vocab size", vocab.size, "A", vocab.a_range(), "B", vocab.b_range())

corpus = generate_corpus(ScenarioSpec("minimum"), CorpusSizes(200, 1000, 20, 20), vocab=vocab, corpus_seed=0)
ex = corpus.pool[0]
print("doc   ", ex.doc)
print("sum_a ", ex.sum_a)  # tokens seen at least twice, in first-occurrence order
print("sum_b ", ex.sum_b)  # the same tokens shifted into language B

# the labels can be recomputed from the document alone
assert salient_summary(ex.doc, repeat=2, n_max=8) == ex.sum_a
assert translate_tokens(vocab, ex.sum_a) == ex.sum_b

# scenarios are nested prefixes of one shuffle of the pool
print("minimum scenario", len(corpus.scenario), "parallel pairs out of", len(corpus.pool))

# MCLAS target: [BOS] S^A [LSEP] S^B [EOS], with the loss split into two spans
ct = build_concat_target(ex.sum_a, ex.sum_b, vocab)
print("concat", ct.tokens, "span_a", ct.span_a, "span_b", ct.span_b, "lsep at", ct.lsep_index)

model = Seq2SeqModel(ModelConfig(vocab_size=vocab.size), seed=0).eval()
total, part_a, part_b = loss_mclas(model, [ex])
print(f"untrained mclas loss {total.item():.4f} = {part_a.item():.4f} (S^A) + {part_b.item():.4f} (S^B)")
print(f"untrained ncls loss {loss_ncls(model, [ex]).item():.4f}; "
      f"uniform guess over {len(ex.sum_b) + 1} tokens would be {(len(ex.sum_b) + 1) * np.log(vocab.size):.4f}")
