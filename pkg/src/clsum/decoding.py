"""Language-constrained beam search with per-phase trigram blocking.

Three decode modes:

* ``mclas``: the unified decoder writes ``S^A``, then the separator, then
  ``S^B``; phase A may only emit language-A ids or the separator, phase B
  only language-B ids or EOS.
* ``ncls``: a cross-lingual decoder limited to language B and EOS.
* ``ms``: a monolingual decoder limited to language A and EOS.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, LSEP, PAD, SPECIALS, UNK, Vocabulary
from .model import AttentionRecord, Seq2SeqModel, attention_records

DECODE_MODES = ("mclas", "ncls", "ms")


class MalformedOutputError(ValueError):
    def __init__(self, message, tokens):
        super().__init__(f"{message}: {list(tokens)}")
        self.tokens = list(tokens)


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    length_penalty_alpha: float = 1.0
    max_len: int = 40
    trigram_block: bool = True
    language_constraint: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 3:
            raise ValueError("max_len must be >= 3")


def vocab_mask(vocab: Vocabulary, phase: str, mode: str = "mclas") -> np.ndarray:
    """Boolean mask over the vocabulary of ids allowed next."""
    allowed = np.zeros(vocab.size, dtype=bool)
    if mode == "ms":
        allowed[vocab.a_start:vocab.a_end] = True
        allowed[EOS] = True
    elif mode == "ncls" or phase == "B":
        allowed[vocab.b_start:vocab.b_end] = True
        allowed[EOS] = True
    elif phase == "A":
        allowed[vocab.a_start:vocab.a_end] = True
        allowed[LSEP] = True
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return allowed


def masked_log_softmax(logits: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Log-probabilities renormalised over ``allowed``; -inf elsewhere."""
    z = np.where(allowed, logits, -np.inf)
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def _segment(prefix: Sequence[int]) -> list[int]:
    """Content tokens after the last BOS/LSEP separator."""
    start = 0
    for i, t in enumerate(prefix):
        if t in (BOS, LSEP):
            start = i + 1
    return [t for t in prefix[start:] if t not in SPECIALS]


def trigram_blocked(prefix: Sequence[int], candidate: int) -> bool:
    """True iff appending ``candidate`` repeats a trigram of the current phase segment."""
    if candidate in SPECIALS:
        return False
    seg = _segment(prefix)
    if len(seg) < 2:
        return False
    new = (seg[-2], seg[-1], candidate)
    return any(tuple(seg[i:i + 3]) == new for i in range(len(seg) - 2))


def length_penalty(length: int, alpha: float) -> float:
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logprob: float = 0.0
    phase: str = "A"
    finished: bool = False
    attention: list[AttentionRecord] | None = None

    def score(self, alpha: float) -> float:
        return self.logprob / length_penalty(max(len(self.tokens) - 1, 1), alpha)


@dataclass
class DecodeResult:
    tokens: list[int]
    sum_a: list[int] | None
    sum_b: list[int]
    score: float
    logprob: float
    truncated: bool
    attention: list[AttentionRecord] | None = field(default=None, repr=False)


def split_at_lsep(tokens: Sequence[int]) -> tuple[list[int], list[int]]:
    """Split an MCLAS output at its single separator, dropping special ids."""
    n_sep = sum(1 for t in tokens if t == LSEP)
    if n_sep != 1:
        raise MalformedOutputError(f"expected exactly one separator, found {n_sep}", tokens)
    i = list(tokens).index(LSEP)
    strip = lambda seq: [t for t in seq if t not in SPECIALS]  # noqa: E731
    return strip(tokens[:i]), strip(tokens[i + 1:])


def _rank_key(logprob: float, tokens: Sequence[int]):
    # higher log-prob first, then lexicographically smaller sequence
    return (-logprob, tuple(tokens))


def _top_candidates(alive: list[BeamHypothesis], scores: np.ndarray, K: int, block: bool) -> list:
    """Best-ranked expansions: enough to refill the beam, plus every candidate tied with the last one."""
    V = scores.shape[1]
    order = np.argsort(-scores.ravel(), kind="stable")
    picked = []
    non_eos = 0
    cutoff = None
    for flat in order:
        lp = float(scores.flat[flat])
        if lp == -np.inf or (cutoff is not None and lp < cutoff):
            break
        h = alive[flat // V]
        tok = int(flat % V)
        if block and trigram_blocked(h.tokens, tok):
            continue
        picked.append((lp, h.tokens + [tok], h.phase))
        non_eos += tok != EOS
        if cutoff is None and non_eos >= K and len(picked) >= K:
            cutoff = lp
    picked.sort(key=lambda c: _rank_key(c[0], c[1]))
    return picked


def beam_search(model: Seq2SeqModel, doc: Sequence[int], mode: str, config: DecodeConfig = DecodeConfig(),
                vocab: Vocabulary | None = None, which: int | None = None,
                capture_attention: bool = False) -> DecodeResult:
    """Decode one document.

    ``which`` picks the decoder (default: 2 for ``ncls`` on a two-decoder
    model, else 1).  Candidates at each step are ranked by cumulative
    log-probability (ties: smaller token sequence); EOS candidates ranked
    within the beam width are finalised.  The returned hypothesis has the best
    length-penalised score among finished ones, or is the best unfinished one
    with ``truncated`` set.
    """
    if mode not in DECODE_MODES:
        raise ValueError(f"mode must be one of {DECODE_MODES}, got {mode!r}")
    vocab = vocab or Vocabulary(size_per_language=(model.config.vocab_size - 5) // 2)
    if which is None:
        which = 2 if mode == "ncls" and model.config.decoder_count == 2 else 1
    model.check_decoder(which)
    K, alpha = config.beam_size, config.length_penalty_alpha
    start_phase = "A" if mode in ("mclas", "ms") else "B"
    masks = {ph: vocab_mask(vocab, ph, mode) for ph in ("A", "B")}
    if not config.language_constraint:
        masks = {ph: np.ones(vocab.size, dtype=bool) for ph in ("A", "B")}
        masks["A"][[PAD, BOS, UNK]] = False
        masks["B"][[PAD, BOS, UNK]] = False
        if mode == "mclas":
            masks["A"][EOS] = False
        else:
            masks[start_phase][LSEP] = False

    was_training = model.training
    model.eval()
    with T.no_grad():
        memory, src_mask = model.encode([list(doc)])
        alive = [BeamHypothesis([BOS], 0.0, start_phase)]
        finished: list[BeamHypothesis] = []
        for _ in range(config.max_len - 1):
            mem = T.Tensor(np.repeat(memory.data, len(alive), axis=0))
            smask = np.repeat(src_mask, len(alive), axis=0)
            logits = model.decode(mem, smask, np.array([h.tokens for h in alive]), which).data[:, -1, :]
            scores = np.full(logits.shape, -np.inf)
            for i, (h, row) in enumerate(zip(alive, logits)):
                scores[i] = h.logprob + masked_log_softmax(row, masks[h.phase])
            cands = _top_candidates(alive, scores, K, config.trigram_block)
            alive = []
            for rank, (lp, toks, phase) in enumerate(cands):
                if toks[-1] == EOS:
                    if rank < K:
                        finished.append(BeamHypothesis(toks, lp, phase, finished=True))
                elif len(alive) < K:
                    alive.append(BeamHypothesis(toks, lp, "B" if toks[-1] == LSEP else phase))
            if len(finished) >= K or not alive:
                break
    model.train(was_training)

    pool = finished if finished else alive
    truncated = not finished
    best = min(pool, key=lambda h: (-h.score(alpha), tuple(h.tokens)))
    if mode == "mclas":
        tokens = best.tokens if not truncated else best.tokens + ([LSEP] if LSEP not in best.tokens else [])
        sum_a, sum_b = split_at_lsep(tokens)
    else:
        sum_a, sum_b = None, [t for t in best.tokens if t not in SPECIALS]
        if mode == "ms":
            sum_a, sum_b = sum_b, []
    attention = None
    if capture_attention:
        attention = teacher_forced_attention(model, doc, best.tokens, which)
    return DecodeResult(tokens=best.tokens, sum_a=sum_a, sum_b=sum_b, score=best.score(alpha),
                        logprob=best.logprob, truncated=truncated, attention=attention)


def teacher_forced_attention(model: Seq2SeqModel, doc: Sequence[int], tokens: Sequence[int],
                             which: int = 1) -> list[AttentionRecord]:
    """Attention records of one teacher-forced pass over ``tokens`` (decoder input = all tokens)."""
    cap: dict = {}
    with T.no_grad():
        memory, src_mask = model.encode([list(doc)])
        model.decode(memory, src_mask, np.array([list(tokens)]), which, cap)
    return attention_records(cap)


def greedy_decode(model: Seq2SeqModel, doc: Sequence[int], mode: str, vocab: Vocabulary, max_len: int = 40,
                  which: int = 1) -> list[int]:
    """Argmax decoding under the language constraint, no blocking (reference for beam size 1)."""
    phase = "A" if mode in ("mclas", "ms") else "B"
    with T.no_grad():
        memory, src_mask = model.encode([list(doc)])
        tokens = [BOS]
        while len(tokens) < max_len:
            logits, _ = model.decode_step(memory, src_mask, tokens, which)
            logp = masked_log_softmax(logits, vocab_mask(vocab, phase, mode))
            tok = int(np.argmax(logp))
            tokens.append(tok)
            if tok == EOS:
                break
            if tok == LSEP:
                phase = "B"
    return tokens


def decode_corpus(model: Seq2SeqModel, docs: Sequence[Sequence[int]], mode: str, config: DecodeConfig,
                  vocab: Vocabulary, which: int | None = None, ids: Sequence[str] | None = None) -> list[dict]:
    """Decode records ``{doc_id, sum_a, sum_b, score, truncated}`` for each document."""
    ids = [str(i) for i in range(len(docs))] if ids is None else list(ids)
    out = []
    for doc_id, doc in zip(ids, docs):
        r = beam_search(model, doc, mode, config, vocab, which)
        out.append({"doc_id": doc_id, "sum_a": r.sum_a, "sum_b": r.sum_b, "score": r.score,
                    "truncated": r.truncated})
    return out


def write_decodes(records: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({k: r[k] for k in ("doc_id", "sum_a", "sum_b", "score", "truncated")}) + "\n")
    return path


def read_decodes(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
