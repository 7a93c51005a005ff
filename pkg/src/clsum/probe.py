"""Decoder attention probing for unified-decoder models.

Self-attention heads are labelled *translation* (rows of the cross-lingual
segment put their argmax on the aligned monolingual token), *local* (mass on
the few preceding positions) and *self* (mass on the diagonal).
Encoder-decoder heads are labelled *summarization* (mass on salient document
positions in both phases) or *translation* (salient in the monolingual phase,
near-uniform in the cross-lingual phase).  A head may carry several labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS, LSEP, Example, GenParams, Vocabulary, generate_example
from .model import Seq2SeqModel
from .objectives import build_concat_target


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeThresholds:
    translation: float = 0.5
    local: float = 0.5
    window: int = 3
    self_mass: float = 0.5
    salient: float = 0.5
    entropy: float = 0.9
    tolerance: int = 1


@dataclass
class AttentionMap:
    kind: str  # "self" | "enc-dec"
    layer: int
    head: int
    weights: np.ndarray  # (query_len, key_len)
    query_labels: list[str] = field(default_factory=list)
    key_labels: list[str] = field(default_factory=list)
    lsep_index: int | None = None  # query (and, for self maps, key) position of the separator

    @property
    def name(self) -> str:
        return f"layer{self.layer}-head{self.head}-{self.kind}"


@dataclass
class HeadClassification:
    layer: int
    head: int
    kind: str
    labels: tuple[str, ...]
    stats: dict[str, float]


def _labels(tokens: Sequence[int], lsep_index: int | None) -> list[str]:
    out = []
    for i, t in enumerate(tokens):
        if t == BOS:
            out.append("BOS")
        elif t == LSEP:
            out.append("LSEP")
        else:
            phase = "A" if lsep_index is None or i < lsep_index else "B"
            out.append(f"{t}{phase}")
    return out


def collect_attention(model: Seq2SeqModel, probe: Sequence[Example], per_example: bool = False):
    """Teacher-forced decoder attention over ``[BOS] S^A [LSEP] S^B``.

    All probe examples must share one layout (document length and both summary
    lengths); weights are averaged position-wise.  Returns
    ``{(kind, layer, head): AttentionMap}``; with ``per_example`` also the raw
    (examples, heads, query, key) arrays per kind and layer.
    """
    if not probe:
        raise ProbeError("empty probe set")
    if model.config.decoder_count != 1:
        raise ProbeError("attention probing expects a unified single-decoder model")
    layout = {(len(ex.doc), len(ex.sum_a), len(ex.sum_b or ())) for ex in probe}
    if len(layout) != 1:
        raise ProbeError(f"probe examples have heterogeneous layouts {sorted(layout)}; bucket them first")
    targets = [build_concat_target(ex.sum_a, ex.sum_b) for ex in probe]
    cap: dict = {}
    with T.no_grad():
        memory, src_mask = model.encode([ex.doc for ex in probe])
        model.decode(memory, src_mask, np.array([ct.decoder_input for ct in targets]), 1, cap)
    lsep = targets[0].lsep_index
    q_labels = _labels(targets[0].decoder_input, lsep)
    maps = {}
    for kind in ("self", "enc-dec"):
        for layer, w in enumerate(cap[kind]):
            avg = w.mean(axis=0)
            for head in range(avg.shape[0]):
                k_labels = q_labels if kind == "self" else [str(t) for t in probe[0].doc]
                maps[(kind, layer, head)] = AttentionMap(kind, layer, head, avg[head], q_labels, k_labels, lsep)
    if per_example:
        return maps, cap
    return maps


def bijection_alignment(n_a: int, n_b: int) -> dict[int, int]:
    """Decoder-input position of ``y_j^B`` -> position of ``y_j^A`` for the aligned corpus."""
    if n_a != n_b:
        raise ProbeError("bijection alignment needs equal-length summaries")
    return {n_a + 1 + j: j for j in range(1, n_b + 1)}


def classify_self_head(amap: AttentionMap, alignment: dict[int, int],
                       th: ProbeThresholds = ProbeThresholds()) -> HeadClassification:
    w = amap.weights
    if not alignment:
        raise ProbeError("no cross-lingual rows to test for translation behaviour")
    hits = [abs(int(np.argmax(w[q])) - a) <= th.tolerance for q, a in alignment.items()]
    rows = range(1, w.shape[0])
    local = [w[q, max(0, q - th.window):q].sum() for q in rows]
    stats = {
        "alignment_hit_rate": float(np.mean(hits)),
        "local_mass": float(np.mean(local)) if local else 0.0,
        "self_mass": float(np.mean(np.diag(w))),
    }
    labels = []
    if stats["alignment_hit_rate"] >= th.translation:
        labels.append("translation")
    if stats["local_mass"] >= th.local:
        labels.append("local")
    if stats["self_mass"] >= th.self_mass:
        labels.append("self")
    return HeadClassification(amap.layer, amap.head, "self", tuple(labels), stats)


def encdec_stats(weights: np.ndarray, salient_positions: Sequence[int], lsep_index: int) -> dict[str, float]:
    """Mean salient mass per phase and the mean normalised entropy of cross-lingual rows.

    Rows ``< lsep_index`` belong to the monolingual phase, the rest (the
    separator onward) to the cross-lingual phase.
    """
    if len(salient_positions) == 0:
        raise ProbeError("empty salient position set")
    sal = np.asarray(sorted(set(salient_positions)))
    mass = weights[:, sal].sum(axis=1)
    a_rows, b_rows = weights[:lsep_index], weights[lsep_index:]
    n_keys = weights.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(b_rows > 0, b_rows * np.log(b_rows), 0.0).sum(axis=1)
    max_ent = np.log(n_keys) if n_keys > 1 else 1.0
    return {
        "salient_mass_a": float(mass[:lsep_index].mean()) if len(a_rows) else 0.0,
        "salient_mass_b": float(mass[lsep_index:].mean()) if len(b_rows) else 0.0,
        "entropy_b": float(ent.mean() / max_ent) if len(b_rows) else 0.0,
    }


def label_encdec(stats: dict[str, float], th: ProbeThresholds) -> tuple[str, ...]:
    labels = []
    if stats["salient_mass_a"] >= th.salient and stats["salient_mass_b"] >= th.salient:
        labels.append("summarization")
    if stats["salient_mass_a"] >= th.salient and stats["entropy_b"] >= th.entropy:
        labels.append("translation")
    return tuple(labels)


def classify_encdec_head(amap: AttentionMap, salient_positions: Sequence[int],
                         th: ProbeThresholds = ProbeThresholds()) -> HeadClassification:
    if amap.lsep_index is None:
        raise ProbeError("map lacks the separator position needed to split phases")
    stats = encdec_stats(amap.weights, salient_positions, amap.lsep_index)
    return HeadClassification(amap.layer, amap.head, "enc-dec", label_encdec(stats, th), stats)


def classify_heads(model: Seq2SeqModel, probe: Sequence[Example],
                   th: ProbeThresholds = ProbeThresholds()) -> tuple[dict, list[HeadClassification]]:
    """Collect maps and classify every decoder head.

    Self heads are judged on the averaged map (the alignment depends only on
    the layout).  Salient document positions differ between examples, so
    encoder-decoder statistics are computed per example and then averaged.
    """
    maps, raw = collect_attention(model, probe, per_example=True)
    n_a, n_b = len(probe[0].sum_a), len(probe[0].sum_b)
    alignment = bijection_alignment(n_a, n_b)
    lsep = n_a + 1
    out = []
    for (kind, layer, head), amap in sorted(maps.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0] != "self")):
        if kind == "self":
            out.append(classify_self_head(amap, alignment, th))
            continue
        per = [encdec_stats(raw["enc-dec"][layer][i, head], ex.salient_positions(), lsep)
               for i, ex in enumerate(probe)]
        stats = {k: float(np.mean([s[k] for s in per])) for k in per[0]}
        out.append(HeadClassification(layer, head, "enc-dec", label_encdec(stats, th), stats))
    return maps, out


def label_percentages(classes: Sequence[HeadClassification]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for kind, names in (("self", ("translation", "local", "self")), ("enc-dec", ("summarization", "translation"))):
        group = [c for c in classes if c.kind == kind]
        out[kind] = {n: (100.0 * sum(n in c.labels for c in group) / len(group) if group else 0.0) for n in names}
    return out


def write_summary(classes: Sequence[HeadClassification], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "heads": [{"layer": c.layer, "head": c.head, "kind": c.kind, "labels": list(c.labels), **c.stats}
                  for c in classes],
        "percentages": label_percentages(classes),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def generate_probe_set(vocab: Vocabulary, count: int, n: int, doc_len: int, seed: int = 0,
                       params: GenParams = GenParams(), max_tries: int = 100_000) -> list[Example]:
    """Examples sharing one layout: documents of ``doc_len`` tokens with ``n``-token summaries."""
    rng = np.random.default_rng(seed)
    fixed = GenParams(doc_len=(doc_len, doc_len), salient_count=(n, n), repeat=params.repeat,
                      max_repeat=params.max_repeat, n_max=max(n, params.n_max))
    out = []
    for _ in range(max_tries):
        ex = generate_example(rng, vocab, fixed)
        if len(ex.sum_a) == n:
            out.append(ex)
            if len(out) == count:
                return out
    raise ProbeError(f"could not draw {count} probe examples with n={n}, doc_len={doc_len}")


# ---------------------------------------------------------------------------
# heatmaps
# ---------------------------------------------------------------------------

CELL = 14
MARGIN = 48


def heatmap_svg(amap: AttentionMap) -> str:
    """Grayscale SVG: darker cells carry more weight; a red rule marks the separator row."""
    w = np.clip(amap.weights, 0.0, 1.0)
    nq, nk = w.shape
    width, height = MARGIN + nk * CELL + 4, MARGIN + nq * CELL + 4
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>{amap.name}</title>',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="rgb(255,255,255)"/>']
    for i in range(nq):
        for j in range(nk):
            g = int(round(255 * (1.0 - w[i, j])))
            parts.append(f'<rect class="cell" data-row="{i}" data-col="{j}" x="{MARGIN + j * CELL}" '
                         f'y="{MARGIN + i * CELL}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>')
    for i, lab in enumerate(amap.query_labels[:nq]):
        parts.append(f'<text x="{MARGIN - 2}" y="{MARGIN + i * CELL + CELL - 3}" font-size="8" '
                     f'text-anchor="end">{lab}</text>')
    for j, lab in enumerate(amap.key_labels[:nk]):
        x = MARGIN + j * CELL + CELL - 4
        parts.append(f'<text x="{x}" y="{MARGIN - 2}" font-size="8" transform="rotate(-90 {x} {MARGIN - 2})">'
                     f'{lab}</text>')
    if amap.lsep_index is not None:
        y = MARGIN + amap.lsep_index * CELL
        parts.append(f'<line class="lsep" x1="{MARGIN}" y1="{y}" x2="{MARGIN + nk * CELL}" y2="{y}" '
                     f'stroke="rgb(200,0,0)" stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_heatmap(amap: AttentionMap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(heatmap_svg(amap))
    return path


def emit_all_heatmaps(maps: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [emit_heatmap(m, out_dir / f"{m.name}.svg") for _, m in sorted(maps.items(), key=lambda kv: kv[1].name)]
