import math
import re

import numpy as np
import pytest

from clsum.corpus import Vocabulary
from clsum.model import ModelConfig, Seq2SeqModel
from clsum.probe import (AttentionMap, ProbeError, ProbeThresholds, bijection_alignment, classify_encdec_head,
                         classify_heads, classify_self_head, collect_attention, emit_all_heatmaps, emit_heatmap,
                         generate_probe_set, heatmap_svg, label_percentages, write_summary)

VOCAB = Vocabulary(size_per_language=20)
CFG = ModelConfig(vocab_size=VOCAB.size, layers_enc=1, layers_dec=2, heads=2, d_model=8, d_ff=16)
N = 3  # summary length in the constructed maps; decoder input is BOS a1 a2 a3 LSEP b1 b2 b3
L = 2 * N + 2


def causal_uniform(size=L):
    w = np.tril(np.ones((size, size)))
    return w / w.sum(axis=1, keepdims=True)


def self_map(w):
    return AttentionMap("self", 0, 0, w, lsep_index=N + 1)


def test_alignment():
    assert bijection_alignment(3, 3) == {5: 1, 6: 2, 7: 3}
    with pytest.raises(ProbeError):
        bijection_alignment(2, 3)


def test_translation_oracle():
    w = np.eye(L)
    for q, a in bijection_alignment(N, N).items():
        w[q] = 0.0
        w[q, a] = 1.0
    c = classify_self_head(self_map(w), bijection_alignment(N, N))
    assert "translation" in c.labels and c.stats["alignment_hit_rate"] == 1.0


def test_self_oracle():
    c = classify_self_head(self_map(np.eye(L)), bijection_alignment(N, N))
    assert c.labels == ("self",) and c.stats["self_mass"] == 1.0


def test_local_oracle():
    w = np.zeros((L, L))
    w[0, 0] = 1.0
    for q in range(1, L):
        w[q, q - 1] = 1.0
    c = classify_self_head(self_map(w), bijection_alignment(N, N))
    assert "local" in c.labels and c.stats["local_mass"] == 1.0 and "self" not in c.labels


def test_uniform_previous_positions():
    n = 8  # long enough that a 3-token window holds well under half the mass on average
    size = 2 * n + 2
    w = causal_uniform(size)
    c = classify_self_head(AttentionMap("self", 0, 0, w, lsep_index=n + 1), bijection_alignment(n, n))
    assert c.labels == ()
    assert c.stats["self_mass"] == pytest.approx(np.mean([1 / (q + 1) for q in range(size)]))
    th = ProbeThresholds()
    local = [min(q, th.window) / (q + 1) for q in range(1, size)]
    assert c.stats["local_mass"] == pytest.approx(np.mean(local))
    # argmax of a uniform row is its first key, BOS, which is within tolerance of y_1^A only
    assert c.stats["alignment_hit_rate"] == pytest.approx(1 / n)


def test_self_head_needs_b_rows():
    with pytest.raises(ProbeError):
        classify_self_head(self_map(np.eye(L)), {})


def encdec_map(w):
    return AttentionMap("enc-dec", 1, 0, w, lsep_index=N + 1)


SALIENT = [1, 4, 6]
DOC_LEN = 10


def test_summarization_oracle():
    w = np.zeros((L, DOC_LEN))
    w[:, SALIENT] = 1.0 / len(SALIENT)
    c = classify_encdec_head(encdec_map(w), SALIENT)
    assert c.labels == ("summarization",)
    assert c.stats["salient_mass_a"] == pytest.approx(1.0) and c.stats["salient_mass_b"] == pytest.approx(1.0)


def test_encdec_translation_oracle():
    w = np.full((L, DOC_LEN), 1.0 / DOC_LEN)
    w[:N + 1] = 0.0
    w[:N + 1, SALIENT] = 1.0 / len(SALIENT)
    c = classify_encdec_head(encdec_map(w), SALIENT)
    assert c.labels == ("translation",)
    assert c.stats["entropy_b"] == pytest.approx(1.0)


def test_uniform_encdec():
    w = np.full((L, DOC_LEN), 1.0 / DOC_LEN)
    c = classify_encdec_head(encdec_map(w), SALIENT)
    assert c.labels == ()
    assert c.stats["entropy_b"] == pytest.approx(1.0, abs=1e-12)
    assert c.stats["salient_mass_a"] == pytest.approx(0.3)


def test_empty_salient_set():
    with pytest.raises(ProbeError):
        classify_encdec_head(encdec_map(np.full((L, DOC_LEN), 0.1)), [])


def test_collect_attention_shapes_and_averaging():
    m = Seq2SeqModel(CFG, seed=0)
    probe = generate_probe_set(VOCAB, 4, n=3, doc_len=12, seed=1)
    maps = collect_attention(m, probe)
    assert len(maps) == CFG.layers_dec * CFG.heads * 2
    one = collect_attention(m, probe[:1])
    singles = [collect_attention(m, [ex]) for ex in probe]
    for key, amap in maps.items():
        np.testing.assert_allclose(amap.weights.sum(-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(amap.weights, np.mean([s[key].weights for s in singles], axis=0), atol=1e-12)
    assert one[("self", 0, 0)].weights.shape == (8, 8)
    assert one[("enc-dec", 1, 1)].weights.shape == (8, 12)


def test_heterogeneous_layout_errors():
    m = Seq2SeqModel(CFG, seed=0)
    probe = generate_probe_set(VOCAB, 1, n=3, doc_len=12) + generate_probe_set(VOCAB, 1, n=2, doc_len=12)
    with pytest.raises(ProbeError, match="heterogeneous"):
        collect_attention(m, probe)


def test_classify_heads_and_summary(tmp_path):
    m = Seq2SeqModel(CFG, seed=0)
    probe = generate_probe_set(VOCAB, 5, n=3, doc_len=12, seed=2)
    maps, classes = classify_heads(m, probe)
    assert len(classes) == len(maps)
    for c in classes:
        assert all(0.0 <= v <= 1.0 + 1e-12 for v in c.stats.values())
    pct = label_percentages(classes)
    assert set(pct) == {"self", "enc-dec"}
    import json
    data = json.loads(write_summary(classes, tmp_path / "s.json").read_text())
    assert len(data["heads"]) == len(classes)


def cell_grays(svg):
    cells = re.findall(r'data-row="(\d+)" data-col="(\d+)".*?fill="rgb\((\d+),\d+,\d+\)"', svg)
    return {(int(r), int(c)): int(g) for r, c, g in cells}


def test_heatmap_diagonal():
    svg = heatmap_svg(AttentionMap("self", 0, 0, np.eye(2)))
    grays = cell_grays(svg)
    dark = sorted(k for k, g in grays.items() if g < 128)
    assert dark == [(0, 0), (1, 1)]


def test_heatmap_intensity_ordering():
    rng = np.random.default_rng(0)
    w = rng.random((5, 5))
    w /= w.sum(axis=1, keepdims=True)
    grays = cell_grays(heatmap_svg(AttentionMap("enc-dec", 0, 0, w)))
    flat = [(w[i, j], grays[(i, j)]) for i in range(5) for j in range(5)]
    flat.sort()
    vals = [g for _, g in flat]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_heatmap_deterministic_and_marked(tmp_path):
    amap = AttentionMap("self", 1, 0, causal_uniform(), [str(i) for i in range(L)], [str(i) for i in range(L)], N + 1)
    a = emit_heatmap(amap, tmp_path / "a.svg").read_bytes()
    b = emit_heatmap(amap, tmp_path / "b.svg").read_bytes()
    assert a == b and b'class="lsep"' in a


def test_emit_all_names(tmp_path):
    m = Seq2SeqModel(CFG, seed=0)
    maps = collect_attention(m, generate_probe_set(VOCAB, 2, n=2, doc_len=10))
    paths = emit_all_heatmaps(maps, tmp_path)
    assert len(paths) == len(maps)
    assert {p.name for p in paths} == {f"layer{l}-head{h}-{k}.svg" for k, l, h in maps}
