"""Classify attention heads of a finetuned MCLAS model and draw their heatmaps.

Uses the acceptance sweep's maximum-scenario model when it exists, otherwise
trains a quick one.
"""
import sys
from pathlib import Path

from clsum.corpus import CorpusSizes, ScenarioSpec, Vocabulary, generate_corpus, scenario_subset
from clsum.model import ModelConfig
from clsum.probe import classify_heads, emit_all_heatmaps, generate_probe_set, label_percentages
from clsum.training import TrainConfig, finetune, pretrain_monolingual
from clsum.model import Seq2SeqModel

vocab = Vocabulary(size_per_language=40)
ckpt = Path("artifacts/sweep/runs/mclas-maximum-s0/model.ckpt")
if ckpt.exists():
    model = Seq2SeqModel.load(ckpt)
else:
    print("no sweep checkpoint, training a small model", file=sys.stderr)
    c = generate_corpus(ScenarioSpec("full"), CorpusSizes(2000, 2000, 50, 10), vocab=vocab)
    pre = pretrain_monolingual(Seq2SeqModel(ModelConfig(vocab_size=vocab.size), seed=0), c.mono,
                               TrainConfig(max_steps=800, eval_every=800))
    model = finetune(pre.model, "mclas", scenario_subset(c.pool, ScenarioSpec("maximum")),
                     TrainConfig(max_steps=600, eval_every=600)).model

# fixed layout: every probe example has 4 summary tokens and a 20-token document
probe = generate_probe_set(vocab, 50, n=4, doc_len=20, seed=0)
maps, classes = classify_heads(model, probe)
for c in classes:
    stats = "  ".join(f"{k} {v:.2f}" for k, v in c.stats.items())
    print(f"{c.kind:7s} L{c.layer} H{c.head}  {','.join(c.labels) or '-':26s} {stats}")
print(label_percentages(classes))

# a translation head's phase-B rows put their argmax on the aligned S^A token
out = emit_all_heatmaps(maps, Path("demo-out/heatmaps"))
print("wrote", len(out), "heatmaps to demo-out/heatmaps")
