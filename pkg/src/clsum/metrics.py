"""ROUGE over token ids, length statistics and human-evaluation arithmetic."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ROUGE_KEYS = ("rouge1", "rouge2", "rougeL")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        return cls(p, r, 0.0 if p + r == 0 else 2 * p * r / (p + r))


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence, reference: Sequence, n: int = 1) -> RougeScore:
    """Clipped n-gram overlap; sides shorter than ``n`` give zero precision/recall."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum(min(c, ref[g]) for g, c in cand.items())
    n_cand, n_ref = sum(cand.values()), sum(ref.values())
    return RougeScore.from_pr(overlap / n_cand if n_cand else 0.0, overlap / n_ref if n_ref else 0.0)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    return RougeScore.from_pr(lcs / len(candidate), lcs / len(reference))


def rouge_all(candidate: Sequence, reference: Sequence) -> dict[str, RougeScore]:
    return {"rouge1": rouge_n(candidate, reference, 1), "rouge2": rouge_n(candidate, reference, 2),
            "rougeL": rouge_l(candidate, reference)}


# ---------------------------------------------------------------------------
# human evaluation arithmetic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BwsTally:
    best: int
    worst: int
    total: int


def bws_score(tally: BwsTally) -> float:
    """Fraction of times chosen best minus fraction chosen worst, in [-1, 1]."""
    if tally.total <= 0:
        raise ValueError("best-worst tally needs at least one comparison")
    if tally.best < 0 or tally.worst < 0 or tally.best + tally.worst > tally.total:
        raise ValueError(f"inconsistent tally {tally}")
    return (tally.best - tally.worst) / tally.total


@dataclass(frozen=True)
class KappaResult:
    kappa: float  # NaN when chance agreement is 1
    agreement: float  # mean per-item agreement, in [0, 1]
    diagnostic: str | None = None


def fleiss_kappa(table) -> KappaResult:
    """Fleiss' kappa for an items x categories count table with a constant rater count."""
    counts = np.asarray(table, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise ValueError("need a 2-D table with at least one item")
    raters = counts.sum(axis=1)
    r = raters[0]
    if not np.all(raters == r):
        raise ValueError("every item must be rated by the same number of raters")
    if r < 2:
        raise ValueError("need at least two raters per item")
    n_items = counts.shape[0]
    p_item = ((counts * counts).sum(axis=1) - r) / (r * (r - 1))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / (n_items * r)
    p_e = float((p_cat ** 2).sum())
    if math.isclose(p_e, 1.0):
        return KappaResult(float("nan"), float(p_bar), "chance agreement is 1: all ratings in one category")
    return KappaResult(float((p_bar - p_e) / (1.0 - p_e)), float(p_bar))


# ---------------------------------------------------------------------------
# run-level evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LengthStats:
    len_gen: float
    len_gold: float

    @property
    def delta(self) -> float:
        return self.len_gen - self.len_gold


def _mean_rouge(pairs: Sequence[tuple[Sequence, Sequence]]) -> dict[str, float]:
    out: dict[str, float] = {}
    per = [rouge_all(c, r) for c, r in pairs]
    for key in ROUGE_KEYS:
        for part, attr in (("p", "precision"), ("r", "recall"), ("f1", "f1")):
            out[f"{key}_{part}"] = float(np.mean([getattr(s[key], attr) for s in per])) if per else 0.0
    return out


def evaluate_run(decodes: Sequence[Mapping], references: Mapping[str, object] | Sequence, mode: str | None = None,
                 bws: Mapping[str, float] | None = None, kappa: Mapping[str, float] | None = None) -> dict:
    """Corpus-mean ROUGE (mean of per-example scores), lengths and, when
    monolingual outputs exist, the monolingual ROUGE breakdown.

    ``references`` maps doc ids to objects with ``sum_a``/``sum_b`` (a
    sequence is indexed by position).  The ``mono`` field is ``None`` when no
    decode carries a monolingual summary.
    """
    refs = {str(i): r for i, r in enumerate(references)} if not isinstance(references, Mapping) else \
        {str(k): v for k, v in references.items()}
    ids = [str(d["doc_id"]) for d in decodes]
    missing = sorted(set(ids) - set(refs))
    if missing:
        raise KeyError(f"decodes reference unknown doc ids: {missing}")
    absent = sorted(set(refs) - set(ids))
    if absent:
        raise KeyError(f"no decode for reference doc ids: {absent}")
    pairs_b = [(d["sum_b"], refs[i].sum_b) for d, i in zip(decodes, ids)]
    report: dict = {"mode": mode, "n_docs": len(decodes)}
    report.update(_mean_rouge(pairs_b))
    lengths = LengthStats(float(np.mean([len(c) for c, _ in pairs_b])) if pairs_b else 0.0,
                          float(np.mean([len(r) for _, r in pairs_b])) if pairs_b else 0.0)
    report.update({"len_gen": lengths.len_gen, "len_gold": lengths.len_gold, "len_delta": lengths.delta})
    if any(d.get("sum_a") is not None for d in decodes):
        pairs_a = [(d.get("sum_a") or [], refs[i].sum_a) for d, i in zip(decodes, ids)]
        mono = _mean_rouge(pairs_a)
        mono["len_gen"] = float(np.mean([len(c) for c, _ in pairs_a]))
        mono["len_gold"] = float(np.mean([len(r) for _, r in pairs_a]))
        report["mono"] = mono
    else:
        report["mono"] = None
    report["bertscore"] = None
    report["bws"] = dict(bws) if bws else None
    report["kappa"] = dict(kappa) if kappa else None
    return report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


