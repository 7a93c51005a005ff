"""Pretrain a small model on monolingual summaries, finetune it three ways, decode and score.

Runs in a few minutes; the acceptance-scale sweep is the same recipe with
more data, more steps and three seeds.
"""
from dataclasses import replace

from clsum.corpus import CorpusSizes, ScenarioSpec, Vocabulary, generate_corpus, scenario_subset
from clsum.decoding import DecodeConfig
from clsum.experiment import decode_and_score
from clsum.model import ModelConfig, Seq2SeqModel
from clsum.training import TrainConfig, finetune, pretrain_monolingual

vocab = Vocabulary(size_per_language=40)
corpus = generate_corpus(ScenarioSpec("full"), CorpusSizes(2000, 2000, 100, 100), vocab=vocab, corpus_seed=0)
small = ModelConfig(vocab_size=vocab.size, d_model=32, d_ff=64, heads=4)

# stage one: [BOS] S^A [EOS] from monolingual pairs
pre = pretrain_monolingual(Seq2SeqModel(small, seed=0), corpus.mono, TrainConfig(max_steps=3000, eval_every=500),
                           corpus.valid)
print("pretrain valid nll by step", [(e["step"], round(e["valid_nll"], 3)) for e in pre.evals])

# stage two: 3% of the parallel pool, every objective from the same checkpoint
train = scenario_subset(corpus.pool, ScenarioSpec("maximum"))
print("parallel pairs", len(train))
ft = TrainConfig(max_steps=600, eval_every=100)
for mode in ("ncls", "ncls_ms", "mclas"):
    res = finetune(pre.model, mode, train, ft, corpus.valid)
    records, report = decode_and_score(res.model, mode, corpus.test[:50], DecodeConfig(), vocab)
    mono = report["mono"]["rouge1_f1"] if report["mono"] else float("nan")
    print(f"{mode:8s} best step {res.best_step:4d}  R1 {report['rouge1_f1']:.3f}  "
          f"len {report['len_gen']:.2f}/{report['len_gold']:.2f}  mono R1 {mono:.3f}")
    print("         first decode", records[0]["sum_a"], "|", records[0]["sum_b"],
          "gold", corpus.test[0].sum_b)
