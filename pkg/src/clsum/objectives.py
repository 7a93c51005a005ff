"""Training targets and the three cross-lingual objectives.

Losses follow one reduction everywhere: negative log-likelihood summed over
the positions of each example, then divided by a batch denominator (the batch
size unless the caller passes the size of a larger accumulated step).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, LSEP, PAD, Example, Vocabulary
from .model import ConfigError, Seq2SeqModel, pad_batch
from .tensor import Tensor


class TrainingMode(str, enum.Enum):
    MS = "ms"
    NCLS = "ncls"
    NCLS_MS = "ncls_ms"
    MCLAS = "mclas"

    @property
    def decoder_count(self) -> int:
        return 2 if self is TrainingMode.NCLS_MS else 1


class TargetError(ValueError):
    pass


@dataclass(frozen=True)
class ConcatTarget:
    tokens: tuple[int, ...]
    span_a: range  # prediction indices of y^A tokens and the separator
    span_b: range  # prediction indices of y^B tokens and EOS
    lsep_index: int

    @property
    def decoder_input(self) -> tuple[int, ...]:
        return self.tokens[:-1]

    @property
    def labels(self) -> tuple[int, ...]:
        return self.tokens[1:]


def build_concat_target(sum_a: Sequence[int], sum_b: Sequence[int], vocab: Vocabulary | None = None) -> ConcatTarget:
    """``[BOS] y^A [LSEP] y^B [EOS]``.

    Prediction index ``i`` predicts ``tokens[i + 1]``.  The separator's own
    prediction is charged to the monolingual span.
    """
    if LSEP in sum_a or LSEP in sum_b:
        raise TargetError("separator token inside a summary segment")
    if vocab is not None:
        if any(not vocab.in_a(t) for t in sum_a):
            raise TargetError("monolingual segment has ids outside language A")
        if any(not vocab.in_b(t) for t in sum_b):
            raise TargetError("cross-lingual segment has ids outside language B")
    n, nb = len(sum_a), len(sum_b)
    tokens = (BOS, *sum_a, LSEP, *sum_b, EOS)
    return ConcatTarget(tokens=tokens, span_a=range(0, n + 1), span_b=range(n + 1, n + nb + 2), lsep_index=n + 1)


def wrap_target(summary: Sequence[int]) -> tuple[int, ...]:
    return (BOS, *summary, EOS)


def _require(batch: Sequence[Example], field: str):
    for i, ex in enumerate(batch):
        if getattr(ex, field) is None:
            raise TargetError(f"example {i} in batch has no {field}")


def position_nll(model: Seq2SeqModel, memory: Tensor, src_mask: np.ndarray, targets: Sequence[Sequence[int]],
                 which: int = 1, capture: dict | None = None) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Teacher-forced per-position NLL (B, T) for full targets ``[BOS] ... [EOS]``.

    Returns ``(nll, mask, labels)`` where ``mask`` marks real prediction positions.
    """
    ids = pad_batch(targets)
    inp, labels = ids[:, :-1], ids[:, 1:]
    mask = np.zeros(labels.shape, dtype=bool)
    for i, t in enumerate(targets):
        mask[i, :len(t) - 1] = True
    logits = model.decode(memory, src_mask, inp, which, capture)
    return T.cross_entropy(logits, labels, mask, reduction="none"), mask, labels


def _reduce(nll: Tensor, weights: np.ndarray, denom: float) -> Tensor:
    return T.weighted_sum(nll, weights / denom)


def _denom(batch, denom):
    return float(len(batch) if denom is None else denom)


def loss_ms(model: Seq2SeqModel, batch: Sequence[Example], denom: float | None = None, which: int = 1) -> Tensor:
    """Monolingual objective: NLL of ``[BOS] S^A [EOS]`` given the document."""
    memory, src_mask = model.encode([ex.doc for ex in batch])
    nll, mask, _ = position_nll(model, memory, src_mask, [wrap_target(ex.sum_a) for ex in batch], which)
    return _reduce(nll, mask, _denom(batch, denom))


def loss_ncls(model: Seq2SeqModel, batch: Sequence[Example], denom: float | None = None) -> Tensor:
    """Direct cross-lingual objective: NLL of ``[BOS] S^B [EOS]`` given the document."""
    if model.config.decoder_count != 1:
        raise ConfigError("NCLS expects a single-decoder model")
    _require(batch, "sum_b")
    memory, src_mask = model.encode([ex.doc for ex in batch])
    nll, mask, _ = position_nll(model, memory, src_mask, [wrap_target(ex.sum_b) for ex in batch])
    return _reduce(nll, mask, _denom(batch, denom))


def ncls_ms_parts(model: Seq2SeqModel, batch: Sequence[Example], denom: float | None = None,
                  weights: tuple[float, float] = (1.0, 1.0)) -> tuple[Tensor, Tensor, Tensor | None]:
    """``(total, decoder-1 part, decoder-2 part)``; a zero weight skips that decoder."""
    if model.config.decoder_count != 2:
        raise ConfigError(f"NCLS+MS needs two decoders, model has {model.config.decoder_count}")
    _require(batch, "sum_b")
    d = _denom(batch, denom)
    memory, src_mask = model.encode([ex.doc for ex in batch])
    nll_a, mask_a, _ = position_nll(model, memory, src_mask, [wrap_target(ex.sum_a) for ex in batch], 1)
    part_a = _reduce(nll_a, mask_a * weights[0], d)
    if weights[1] == 0.0:
        return part_a, part_a, None
    nll_b, mask_b, _ = position_nll(model, memory, src_mask, [wrap_target(ex.sum_b) for ex in batch], 2)
    part_b = _reduce(nll_b, mask_b * weights[1], d)
    return T.add(part_a, part_b), part_a, part_b


def loss_ncls_ms(model: Seq2SeqModel, batch: Sequence[Example], denom: float | None = None,
                 weights: tuple[float, float] = (1.0, 1.0)) -> Tensor:
    """Two decoders on one encoding: decoder 1 on S^A plus decoder 2 on S^B."""
    return ncls_ms_parts(model, batch, denom, weights)[0]


def concat_span_masks(targets: Sequence[ConcatTarget], shape) -> tuple[np.ndarray, np.ndarray]:
    mask_a = np.zeros(shape)
    mask_b = np.zeros(shape)
    for i, ct in enumerate(targets):
        mask_a[i, ct.span_a.start:ct.span_a.stop] = 1.0
        mask_b[i, ct.span_b.start:ct.span_b.stop] = 1.0
    return mask_a, mask_b


def loss_mclas(model: Seq2SeqModel, batch: Sequence[Example], denom: float | None = None,
               vocab: Vocabulary | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Unified-decoder objective over ``[BOS] S^A [LSEP] S^B [EOS]``.

    Returns ``(total, part_a, part_b)`` computed from one forward pass; the
    parts restrict the summed NLL to the two spans and add up to ``total``.
    """
    if model.config.decoder_count != 1:
        raise ConfigError("MCLAS expects a single unified decoder")
    _require(batch, "sum_b")
    targets = [build_concat_target(ex.sum_a, ex.sum_b, vocab) for ex in batch]
    memory, src_mask = model.encode([ex.doc for ex in batch])
    nll, mask, _ = position_nll(model, memory, src_mask, [ct.tokens for ct in targets])
    mask_a, mask_b = concat_span_masks(targets, mask.shape)
    d = _denom(batch, denom)
    return _reduce(nll, mask, d), _reduce(nll, mask_a, d), _reduce(nll, mask_b, d)


def loss_parts(mode: TrainingMode, model: Seq2SeqModel, batch: Sequence[Example],
               denom: float | None = None) -> tuple[Tensor, float | None, float | None]:
    """Differentiable total loss plus the monolingual / cross-lingual parts as floats."""
    mode = TrainingMode(mode)
    if mode is TrainingMode.MS:
        total = loss_ms(model, batch, denom)
        return total, total.item(), None
    if mode is TrainingMode.NCLS:
        total = loss_ncls(model, batch, denom)
        return total, None, total.item()
    if mode is TrainingMode.NCLS_MS:
        total, a, b = ncls_ms_parts(model, batch, denom)
    else:
        total, a, b = loss_mclas(model, batch, denom)
    return total, a.item(), b.item()


@dataclass
class NllReport:
    """Per-token validation statistics for the monolingual and cross-lingual targets."""

    nll_a: float | None
    nll_b: float | None
    acc_a: float | None
    acc_b: float | None
    tokens_a: int
    tokens_b: int

    @property
    def ppl_b(self) -> float | None:
        return None if self.nll_b is None else float(np.exp(self.nll_b))


def evaluate_nll(model: Seq2SeqModel, examples: Sequence[Example], mode: TrainingMode,
                 batch_size: int = 64) -> NllReport:
    """Teacher-forced per-token NLL and next-token accuracy, split by target language.

    ``ms`` scores only S^A, ``ncls`` only S^B, ``ncls_ms`` scores each decoder
    on its own target and ``mclas`` splits the concatenated target by span.
    """
    mode = TrainingMode(mode)
    sums = {"a": [0.0, 0, 0], "b": [0.0, 0, 0]}  # nll, correct, count
    was_training = model.training
    model.eval()

    def tally(key, nll, logits_arg, labels, weights):
        w = weights.astype(bool)
        sums[key][0] += float((nll * w).sum())
        sums[key][1] += int(((logits_arg == labels) & w).sum())
        sums[key][2] += int(w.sum())

    with T.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            memory, src_mask = model.encode([ex.doc for ex in batch])
            if mode is TrainingMode.MCLAS:
                targets = [build_concat_target(ex.sum_a, ex.sum_b) for ex in batch]
                seqs = [ct.tokens for ct in targets]
                runs = [(None, seqs, 1)]
            else:
                runs = []
                if mode in (TrainingMode.MS, TrainingMode.NCLS_MS):
                    runs.append(("a", [wrap_target(ex.sum_a) for ex in batch], 1))
                if mode in (TrainingMode.NCLS, TrainingMode.NCLS_MS):
                    runs.append(("b", [wrap_target(ex.sum_b) for ex in batch], 2 if mode is TrainingMode.NCLS_MS else 1))
            for key, seqs, which in runs:
                ids = pad_batch(seqs)
                logits = model.decode(memory, src_mask, ids[:, :-1], which)
                labels = ids[:, 1:]
                mask = np.zeros(labels.shape, dtype=bool)
                for i, s in enumerate(seqs):
                    mask[i, :len(s) - 1] = True
                nll = T.cross_entropy(logits, labels, mask, reduction="none").data
                pred = logits.data.argmax(-1)
                if key is None:
                    mask_a, mask_b = concat_span_masks(targets, mask.shape)
                    tally("a", nll, pred, labels, mask_a)
                    tally("b", nll, pred, labels, mask_b)
                else:
                    tally(key, nll, pred, labels, mask)
    model.train(was_training)

    def avg(key, idx):
        return sums[key][idx] / sums[key][2] if sums[key][2] else None

    return NllReport(nll_a=avg("a", 0), nll_b=avg("b", 0), acc_a=avg("a", 1), acc_b=avg("b", 1),
                     tokens_a=sums["a"][2], tokens_b=sums["b"][2])
