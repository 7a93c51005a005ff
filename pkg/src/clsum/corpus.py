"""Synthetic two-language summarisation corpus with a known token bijection.

A document is a sequence of language-A tokens.  Tokens placed at least
``repeat`` times are salient; every other (distractor) token occurs fewer
times.  The monolingual summary lists the distinct salient tokens in order of
first occurrence, and the cross-lingual summary is its token-by-token image
under a fixed offset bijection into the language-B id range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PAD, BOS, EOS, LSEP, UNK = 0, 1, 2, 3, 4
SPECIALS = (PAD, BOS, EOS, LSEP, UNK)
SPECIAL_NAMES = {"pad": PAD, "bos": BOS, "eos": EOS, "lsep": LSEP, "unk": UNK}

DEFAULT_FRACTIONS = {"minimum": 0.003, "medium": 0.015, "maximum": 0.030, "full": 1.0}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Special ids 0-4, then language A ids ``[a_start, a_start + size)``, then language B."""

    size_per_language: int = 100
    a_start: int = 5
    b_start: int | None = None

    def __post_init__(self):
        if self.size_per_language < 1:
            raise CorpusError("each language needs at least one content token")
        if self.a_start < len(SPECIALS):
            raise CorpusError(f"language A range must start at or after {len(SPECIALS)}")
        if self.b_start is None:
            object.__setattr__(self, "b_start", self.a_start + self.size_per_language)
        lo, hi = sorted([(self.a_start, self.a_end), (self.b_start, self.b_end)])
        if lo[1] > hi[0] or self.b_start < len(SPECIALS):
            raise CorpusError("language ranges overlap each other or the special ids")

    @property
    def a_end(self) -> int:
        return self.a_start + self.size_per_language

    @property
    def b_end(self) -> int:
        return self.b_start + self.size_per_language

    @property
    def size(self) -> int:
        return max(self.a_end, self.b_end)

    def a_range(self) -> range:
        return range(self.a_start, self.a_end)

    def b_range(self) -> range:
        return range(self.b_start, self.b_end)

    def in_a(self, tok: int) -> bool:
        return self.a_start <= tok < self.a_end

    def in_b(self, tok: int) -> bool:
        return self.b_start <= tok < self.b_end

    def header(self) -> str:
        return (f"pad={PAD} bos={BOS} eos={EOS} lsep={LSEP} unk={UNK} "
                f"a={self.a_start}:{self.a_end} b={self.b_start}:{self.b_end} vocab={self.size}")


def translate_tokens(vocab: Vocabulary, tokens_a: Sequence[int]) -> list[int]:
    out = []
    for t in tokens_a:
        if not vocab.in_a(t):
            raise CorpusError(f"token {t} is outside language A range [{vocab.a_start}, {vocab.a_end})")
        out.append(t - vocab.a_start + vocab.b_start)
    return out


def untranslate_tokens(vocab: Vocabulary, tokens_b: Sequence[int]) -> list[int]:
    out = []
    for t in tokens_b:
        if not vocab.in_b(t):
            raise CorpusError(f"token {t} is outside language B range [{vocab.b_start}, {vocab.b_end})")
        out.append(t - vocab.b_start + vocab.a_start)
    return out


@dataclass
class Example:
    doc: list[int]
    sum_a: list[int]
    sum_b: list[int] | None = None

    def salient_positions(self) -> list[int]:
        keep = set(self.sum_a)
        return [i for i, t in enumerate(self.doc) if t in keep]


@dataclass(frozen=True)
class GenParams:
    doc_len: tuple[int, int] = (16, 24)
    salient_count: tuple[int, int] = (2, 5)
    repeat: int = 2
    max_repeat: int = 3
    n_max: int = 8
    b_extra: int = 0  # extra B-side tokens appended to emulate length imbalance


def salient_summary(doc: Sequence[int], repeat: int, n_max: int) -> list[int]:
    """Distinct tokens occurring at least ``repeat`` times, in first-occurrence order."""
    counts: dict[int, int] = {}
    for t in doc:
        counts[t] = counts.get(t, 0) + 1
    out, seen = [], set()
    for t in doc:
        if counts[t] >= repeat and t not in seen:
            seen.add(t)
            out.append(t)
    return out[:n_max]


def generate_example(rng: np.random.Generator, vocab: Vocabulary, params: GenParams = GenParams()) -> Example:
    lo, hi = params.doc_len
    s_lo, s_hi = params.salient_count
    if lo > hi or s_lo > s_hi or lo < 1 or s_lo < 0 or params.repeat < 1 or params.max_repeat < params.repeat:
        raise CorpusError(f"empty or invalid parameter range in {params}")
    if s_lo * params.repeat > hi:
        raise CorpusError(f"doc_len up to {hi} cannot hold {s_lo} salient tokens x{params.repeat}")
    m = int(rng.integers(lo, hi + 1))
    k = int(rng.integers(s_lo, min(s_hi, m // params.repeat) + 1))
    counts = [int(rng.integers(params.repeat, params.max_repeat + 1)) for _ in range(k)]
    while sum(counts) > m:
        counts[counts.index(max(counts))] -= 1
    if params.repeat == 1:
        # distractors would need zero occurrences: every token is salient
        if k == 0:
            raise CorpusError("repeat=1 with zero salient tokens cannot fill a document")
        for i in range(m - sum(counts)):
            counts[i % k] += 1
    n_distract = m - sum(counts)
    if k + n_distract > vocab.size_per_language:
        raise CorpusError(f"vocabulary of {vocab.size_per_language} too small for {k + n_distract} distinct tokens")
    tokens = rng.choice(np.arange(vocab.a_start, vocab.a_end), size=k + n_distract, replace=False).tolist()
    doc = [t for t, c in zip(tokens[:k], counts) for _ in range(c)] + tokens[k:]
    doc = [doc[i] for i in rng.permutation(len(doc))]
    sum_a = salient_summary(doc, params.repeat, params.n_max)
    sum_b = translate_tokens(vocab, sum_a)
    if params.b_extra:
        fillers = [t for t in doc if t not in set(sum_a)]
        sum_b += translate_tokens(vocab, fillers[:params.b_extra])
    return Example(doc=doc, sum_a=sum_a, sum_b=sum_b)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "full"
    parallel_fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.parallel_fraction is None:
            if self.name not in DEFAULT_FRACTIONS:
                raise CorpusError(f"unknown scenario {self.name!r} and no fraction given")
            object.__setattr__(self, "parallel_fraction", DEFAULT_FRACTIONS[self.name])
        if not 0.0 < self.parallel_fraction <= 1.0:
            raise CorpusError(f"parallel_fraction must lie in (0, 1], got {self.parallel_fraction}")


@dataclass(frozen=True)
class CorpusSizes:
    mono_pretrain: int = 2000
    parallel_pool: int = 1000
    valid: int = 200
    test: int = 200


@dataclass
class Corpus:
    vocab: Vocabulary
    mono: list[Example]
    pool: list[Example]
    valid: list[Example]
    test: list[Example]
    scenario: list[Example] = field(default_factory=list)
    scenario_spec: ScenarioSpec | None = None


def scenario_size(fraction: float, pool_size: int) -> int:
    # round away float noise (0.003 * 10000 = 30.000000000000004) before the ceiling
    return math.ceil(round(fraction * pool_size, 9))


def scenario_indices(pool_size: int, spec: ScenarioSpec) -> list[int]:
    """First ``ceil(fraction * pool)`` entries of a seeded shuffle; nested across fractions."""
    n = scenario_size(spec.parallel_fraction, pool_size)
    if n == 0:
        raise CorpusError(f"fraction {spec.parallel_fraction} of a pool of {pool_size} selects nothing; "
                          "use a larger parallel pool")
    order = np.random.default_rng(spec.seed).permutation(pool_size)
    return order[:n].tolist()


def scenario_subset(pool: Sequence[Example], spec: ScenarioSpec) -> list[Example]:
    return [pool[i] for i in scenario_indices(len(pool), spec)]


def generate_split(n: int, vocab: Vocabulary, params: GenParams, seed_seq: np.random.SeedSequence) -> list[Example]:
    rng = np.random.default_rng(seed_seq)
    return [generate_example(rng, vocab, params) for _ in range(n)]


def generate_corpus(spec: ScenarioSpec, sizes: CorpusSizes, params: GenParams = GenParams(),
                    vocab: Vocabulary = Vocabulary(), corpus_seed: int | None = None) -> Corpus:
    """Build every split plus the scenario subset of the parallel pool.

    Documents are drawn from ``corpus_seed`` (default ``spec.seed``); the
    scenario shuffle uses ``spec.seed``, so several seeds can share one pool.
    """
    for name, value in vars(sizes).items():
        if value <= 0:
            raise CorpusError(f"corpus size {name} must be positive, got {value}")
    root = np.random.SeedSequence(spec.seed if corpus_seed is None else corpus_seed)
    s_mono, s_pool, s_valid, s_test = root.spawn(4)
    mono = generate_split(sizes.mono_pretrain, vocab, params, s_mono)
    for ex in mono:
        ex.sum_b = None
    pool = generate_split(sizes.parallel_pool, vocab, params, s_pool)
    corpus = Corpus(vocab=vocab, mono=mono, pool=pool,
                    valid=generate_split(sizes.valid, vocab, params, s_valid),
                    test=generate_split(sizes.test, vocab, params, s_test))
    corpus.scenario = scenario_subset(pool, spec)
    corpus.scenario_spec = spec
    return corpus


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

HEADER_TAG = "#clsum-corpus v1"
FIELDS = ("doc", "sum_a", "sum_b")


def write_corpus(examples: Sequence[Example], path, vocab: Vocabulary, kind: str = "parallel") -> Path:
    """One header line, then one tab-separated ``field=ids`` record per example."""
    if kind not in ("mono", "parallel"):
        raise CorpusError(f"split kind must be 'mono' or 'parallel', got {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{HEADER_TAG} kind={kind} {vocab.header()}"]
    for ex in examples:
        parts = [f"doc={' '.join(map(str, ex.doc))}", f"sum_a={' '.join(map(str, ex.sum_a))}"]
        if ex.sum_b is not None:
            parts.append(f"sum_b={' '.join(map(str, ex.sum_b))}")
        elif kind == "parallel":
            raise CorpusError("parallel split example without sum_b")
        lines.append("\t".join(parts))
    path.write_text("\n".join(lines) + "\n")
    return path


def parse_header(line: str) -> tuple[str, Vocabulary]:
    if not line.startswith(HEADER_TAG):
        raise CorpusError(f"line 1: missing '{HEADER_TAG}' header")
    fields = dict(item.split("=", 1) for item in line[len(HEADER_TAG):].split())
    for name, expected in SPECIAL_NAMES.items():
        if int(fields.get(name, -1)) != expected:
            raise CorpusError(f"line 1: special id {name} must be {expected}")
    a_lo, a_hi = map(int, fields["a"].split(":"))
    b_lo, b_hi = map(int, fields["b"].split(":"))
    if a_hi - a_lo != b_hi - b_lo:
        raise CorpusError("line 1: language ranges differ in size")
    vocab = Vocabulary(size_per_language=a_hi - a_lo, a_start=a_lo, b_start=b_lo)
    if int(fields["vocab"]) != vocab.size:
        raise CorpusError(f"line 1: declared vocab {fields['vocab']} disagrees with ranges ({vocab.size})")
    return fields.get("kind", "parallel"), vocab


def read_corpus(path) -> tuple[list[Example], Vocabulary, str]:
    """Return ``(examples, vocab, kind)``; validates every id against the header ranges."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty file")
    kind, vocab = parse_header(lines[0])
    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = {}
        for part in line.split("\t"):
            name, sep, ids = part.partition("=")
            if not sep or name not in FIELDS:
                raise CorpusError(f"line {lineno}: malformed field {part!r}")
            try:
                record[name] = [int(t) for t in ids.split()]
            except ValueError:
                raise CorpusError(f"line {lineno}: non-integer id in field {name}") from None
        for name in ("doc", "sum_a") + (("sum_b",) if kind == "parallel" else ()):
            if name not in record:
                raise CorpusError(f"line {lineno}: missing field {name}")
        for name in ("doc", "sum_a"):
            bad = [t for t in record[name] if not vocab.in_a(t)]
            if bad:
                raise CorpusError(f"line {lineno}: field {name} has ids {bad} outside language A range")
        if "sum_b" in record:
            bad = [t for t in record["sum_b"] if not vocab.in_b(t)]
            if bad:
                raise CorpusError(f"line {lineno}: field sum_b has ids {bad} outside language B range")
        examples.append(Example(doc=record["doc"], sum_a=record["sum_a"], sum_b=record.get("sum_b")))
    return examples, vocab, kind


def write_corpus_dir(corpus: Corpus, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "mono": write_corpus(corpus.mono, out_dir / "mono.txt", corpus.vocab, "mono"),
        "pool": write_corpus(corpus.pool, out_dir / "pool.txt", corpus.vocab),
        "valid": write_corpus(corpus.valid, out_dir / "valid.txt", corpus.vocab),
        "test": write_corpus(corpus.test, out_dir / "test.txt", corpus.vocab),
    }
    if corpus.scenario_spec is not None:
        paths["scenario"] = write_corpus(corpus.scenario, out_dir / f"scenario-{corpus.scenario_spec.name}.txt",
                                         corpus.vocab)
    return paths
