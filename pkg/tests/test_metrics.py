import itertools
import math

import numpy as np
import pytest

from clsum.corpus import Example
from clsum.metrics import (BwsTally, bws_score, evaluate_run, fleiss_kappa, lcs_length, read_report, rouge_l,
                           rouge_n, write_report)


def dp_lcs(a, b):
    """Independent quadratic table."""
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i, j] = table[i - 1, j - 1] + 1 if a[i - 1] == b[j - 1] else max(table[i - 1, j], table[i, j - 1])
    return int(table[-1, -1])


def brute_lcs(a, b):
    for k in range(min(len(a), len(b)), 0, -1):
        subs = set(itertools.combinations(a, k))
        if any(s in subs for s in itertools.combinations(b, k)):
            return k
    return 0


def fleiss_direct(table):
    """Textbook formula written out term by term."""
    N = len(table)
    n = sum(table[0])
    k = len(table[0])
    P_i = [(sum(c * c for c in row) - n) / (n * (n - 1)) for row in table]
    P_bar = sum(P_i) / N
    p_j = [sum(row[j] for row in table) / (N * n) for j in range(k)]
    P_e = sum(p * p for p in p_j)
    return (P_bar - P_e) / (1 - P_e)


def test_rouge_n_examples():
    s = rouge_n([1, 2, 3], [1, 2, 3], 1)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    s = rouge_n([1, 2], [3, 4], 1)
    assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
    a, b = 10, 11
    s = rouge_n([a, a, b], [a, b], 1)
    assert s.precision == pytest.approx(2 / 3) and s.recall == 1.0 and s.f1 == pytest.approx(0.8)
    s = rouge_n([a], [a, b], 2)
    assert (s.precision, s.recall) == (0.0, 0.0)
    with pytest.raises(ValueError):
        rouge_n([1], [1], 0)


def test_rouge_l_examples():
    a, b, c, d = 1, 2, 3, 4
    assert brute_lcs([a, b, c, d], [a, c, b, d]) == 3
    s = rouge_l([a, b, c, d], [a, c, b, d])
    assert s.precision == 0.75 and s.recall == 0.75 and s.f1 == pytest.approx(0.75)
    assert rouge_l([5, 6], [5, 6]).f1 == 1.0
    assert rouge_l([], [5]).f1 == 0.0


def test_lcs_matches_dp_oracle_on_100_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.integers(0, 6, size=rng.integers(0, 15)).tolist()
        b = rng.integers(0, 6, size=rng.integers(0, 15)).tolist()
        lcs = dp_lcs(a, b)
        assert lcs_length(a, b) == lcs
        s = rouge_l(a, b)
        if lcs:
            assert s.precision == lcs / len(a) and s.recall == lcs / len(b)


def test_rouge_properties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.integers(0, 5, size=rng.integers(1, 10)).tolist()
        b = rng.integers(0, 5, size=rng.integers(1, 10)).tolist()
        for s in (rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)):
            assert 0 <= s.precision <= 1 and 0 <= s.recall <= 1
            assert s.f1 <= max(s.precision, s.recall) + 1e-15
        assert rouge_n(a, b, 1) == rouge_n(a, list(rng.permutation(b)), 1)


def test_bws():
    assert bws_score(BwsTally(10, 0, 10)) == 1.0
    assert bws_score(BwsTally(0, 10, 10)) == -1.0
    assert bws_score(BwsTally(6, 2, 20)) == pytest.approx(0.2)
    assert bws_score(BwsTally(3, 3, 9)) == 0.0
    with pytest.raises(ValueError):
        bws_score(BwsTally(0, 0, 0))
    with pytest.raises(ValueError):
        bws_score(BwsTally(8, 5, 10))


def test_fleiss_kappa():
    assert fleiss_kappa([[3, 0], [0, 3]]).kappa == pytest.approx(1.0)
    assert fleiss_kappa([[3, 0, 0], [0, 3, 0], [0, 0, 3]]).kappa == pytest.approx(1.0)
    table = [[2, 1], [1, 2], [3, 0], [0, 3]]
    res = fleiss_kappa(table)
    assert abs(res.kappa - fleiss_direct(table)) < 1e-9
    assert res.agreement == pytest.approx((1 / 3 + 1 / 3 + 1 + 1) / 4)
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = rng.multinomial(5, [0.3, 0.5, 0.2], size=6).tolist()
        r = fleiss_kappa(t)
        assert abs(r.kappa - fleiss_direct(t)) < 1e-9 and r.kappa <= 1


def test_fleiss_kappa_degenerate():
    res = fleiss_kappa([[3, 0], [3, 0]])
    assert math.isnan(res.kappa) and "chance agreement" in res.diagnostic
    with pytest.raises(ValueError):
        fleiss_kappa([[2, 1], [1, 1]])
    with pytest.raises(ValueError):
        fleiss_kappa([[1, 0]])


def refs():
    return [Example([5, 5], [5, 6], [105, 106]), Example([7, 7], [7], [107]), Example([8], [8, 9, 10], [108, 109, 110])]


def test_evaluate_run_identity_and_schema(tmp_path):
    decodes = [{"doc_id": str(i), "sum_a": r.sum_a, "sum_b": r.sum_b} for i, r in enumerate(refs())]
    rep = evaluate_run(decodes, refs(), "mclas")
    for k in ("rouge1", "rouge2", "rougeL"):
        assert rep[f"{k}_f1"] == (1.0 if k != "rouge2" else pytest.approx(2 / 3))
    assert rep["len_delta"] == 0.0 and rep["mono"]["rouge1_f1"] == 1.0
    assert rep["bertscore"] is None
    ncls = [{"doc_id": str(i), "sum_a": None, "sum_b": r.sum_b} for i, r in enumerate(refs())]
    assert evaluate_run(ncls, refs(), "ncls")["mono"] is None
    path = write_report(rep, tmp_path / "r.json")
    assert read_report(path) == rep


def test_evaluate_run_mean_of_per_example_scores():
    rng = np.random.default_rng(3)
    decodes = [{"doc_id": str(i), "sum_a": None, "sum_b": rng.integers(105, 112, size=rng.integers(0, 5)).tolist()}
               for i in range(3)]
    rep = evaluate_run(decodes, refs())
    for key, fn in (("rouge1", lambda c, r: rouge_n(c, r, 1)), ("rouge2", lambda c, r: rouge_n(c, r, 2)),
                    ("rougeL", rouge_l)):
        per = [fn(d["sum_b"], r.sum_b) for d, r in zip(decodes, refs())]
        assert rep[f"{key}_f1"] == pytest.approx(sum(s.f1 for s in per) / 3, abs=1e-15)
        assert rep[f"{key}_p"] == pytest.approx(sum(s.precision for s in per) / 3, abs=1e-15)
    assert rep["len_gen"] == pytest.approx(np.mean([len(d["sum_b"]) for d in decodes]))


def test_evaluate_run_id_mismatch():
    decodes = [{"doc_id": "0", "sum_b": []}, {"doc_id": "9", "sum_b": []}]
    with pytest.raises(KeyError, match="9"):
        evaluate_run(decodes, refs())
    with pytest.raises(KeyError, match="1"):
        evaluate_run([{"doc_id": "0", "sum_b": []}], refs()[:2])
