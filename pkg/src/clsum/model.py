"""Pre-norm Transformer encoder-decoder with one or two decoders.

Parameters live in a flat ``name -> Tensor`` dict.  The token embedding is
shared by the encoder, every decoder and the (tied) output projection.
Positions are sinusoidal and there is deliberately no segment embedding: a
decoder learns which language it is producing from the separator token alone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import PAD
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 205
    layers_enc: int = 2
    layers_dec: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    dropout_p: float = 0.1
    max_positions: int = 128
    decoder_count: int = 1
    truncate_long: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "layers_enc", "layers_dec", "heads", "d_model", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.decoder_count not in (1, 2):
            raise ConfigError(f"decoder_count must be 1 or 2, got {self.decoder_count}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class AttentionRecord:
    layer: int
    head: int
    kind: str  # "self" | "enc-dec"
    weights: np.ndarray  # (query_len, key_len)


def sinusoidal_positions(max_positions: int, d_model: int) -> np.ndarray:
    """Row ``p`` is ``[sin(p w_0), cos(p w_0), sin(p w_1), cos(p w_1), ...]``."""
    if d_model % 2:
        raise ConfigError(f"sinusoidal positions need an even width, got {d_model}")
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    out = np.empty((max_positions, d_model))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)
    return out


def _xavier(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _attn_params(rng, prefix, d):
    out = {}
    for w in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{w}"] = _xavier(rng, d, d)
        out[f"{prefix}.b{w[1]}"] = np.zeros(d)
    return out


def _ln_params(prefix, d):
    return {f"{prefix}.gain": np.ones(d), f"{prefix}.bias": np.zeros(d)}


def _ffn_params(rng, prefix, d, d_ff):
    return {f"{prefix}.w1": _xavier(rng, d, d_ff), f"{prefix}.b1": np.zeros(d_ff),
            f"{prefix}.w2": _xavier(rng, d_ff, d), f"{prefix}.b2": np.zeros(d)}


def init_parameters(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = config.d_model
    p = {"embed.weight": rng.normal(0.0, d ** -0.5, size=(config.vocab_size, d))}
    for i in range(config.layers_enc):
        pre = f"encoder.layers.{i}"
        p.update(_ln_params(f"{pre}.ln1", d))
        p.update(_attn_params(rng, f"{pre}.self_attn", d))
        p.update(_ln_params(f"{pre}.ln2", d))
        p.update(_ffn_params(rng, f"{pre}.ffn", d, config.d_ff))
    p.update(_ln_params("encoder.ln_f", d))
    for k in range(1, config.decoder_count + 1):
        for i in range(config.layers_dec):
            pre = f"decoder{k}.layers.{i}"
            p.update(_ln_params(f"{pre}.ln1", d))
            p.update(_attn_params(rng, f"{pre}.self_attn", d))
            p.update(_ln_params(f"{pre}.ln2", d))
            p.update(_attn_params(rng, f"{pre}.cross_attn", d))
            p.update(_ln_params(f"{pre}.ln3", d))
            p.update(_ffn_params(rng, f"{pre}.ffn", d, config.d_ff))
        p.update(_ln_params(f"decoder{k}.ln_f", d))
    return p


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


class Seq2SeqModel:
    """Encoder-decoder over a shared vocabulary.

    ``training`` toggles dropout, which is applied to the input of every
    linear map.  Masks come from ``self.rng`` so a seeded model reproduces its
    training trajectory exactly.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.config = config
        raw = init_parameters(config, seed) if params is None else params
        self.params: dict[str, Tensor] = {n: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=n)
                                          for n, v in raw.items()}
        self.positions = sinusoidal_positions(config.max_positions, config.d_model)
        self.training = False
        self.rng = np.random.default_rng(seed)

    # -- bookkeeping -------------------------------------------------------
    def named_parameters(self):
        return self.params.items()

    def train(self, mode: bool = True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise T.ShapeError(f"parameter {n!r}: checkpoint shape {state[n].shape} != model shape {p.shape}")
            p.data[...] = state[n]

    def save(self, path, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None):
        tensors = self.state_dict()
        if extra:
            tensors.update(extra)
        return save_checkpoint(path, tensors, config=self.config.to_dict(), meta=meta)

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        tensors, config, _ = load_checkpoint(path)
        cfg = ModelConfig.from_dict(config)
        names = init_parameters(cfg, 0).keys()
        return cls(cfg, params={n: tensors[n] for n in names})

    # -- layers ------------------------------------------------------------
    def _p(self, name) -> Tensor:
        return self.params[name]

    def _ln(self, x, pre):
        return T.layer_norm(x, self._p(f"{pre}.gain"), self._p(f"{pre}.bias"))

    def _drop(self, x):
        return T.dropout(x, self.config.dropout_p, self.rng, self.training)

    def _mha(self, pre, x_q, x_kv, mask, capture=None):
        p = self._p
        same = x_q is x_kv
        x_q = self._drop(x_q)
        x_kv = x_q if same else self._drop(x_kv)
        q = T.linear(x_q, p(f"{pre}.wq"), p(f"{pre}.bq"))
        k = T.linear(x_kv, p(f"{pre}.wk"), p(f"{pre}.bk"))
        v = T.linear(x_kv, p(f"{pre}.wv"), p(f"{pre}.bv"))
        a = T.attention(q, k, v, self.config.heads, mask, capture)
        return T.linear(self._drop(a), p(f"{pre}.wo"), p(f"{pre}.bo"))

    def _ffn(self, pre, x):
        p = self._p
        h = T.relu(T.linear(self._drop(x), p(f"{pre}.w1"), p(f"{pre}.b1")))
        return T.linear(self._drop(h), p(f"{pre}.w2"), p(f"{pre}.b2"))

    def _embed(self, ids: np.ndarray) -> Tensor:
        L = ids.shape[1]
        if L > self.config.max_positions:
            raise ConfigError(f"sequence length {L} exceeds max_positions={self.config.max_positions}")
        x = T.embedding(self._p("embed.weight"), ids, np.sqrt(self.config.d_model))
        return T.add(x, self.positions[:L])

    # -- public forward API ------------------------------------------------
    def prepare_source(self, docs: Sequence[Sequence[int]]) -> np.ndarray:
        ids = pad_batch(docs)
        limit = self.config.max_positions
        if ids.shape[1] > limit:
            if not self.config.truncate_long:
                raise ConfigError(f"document of length {ids.shape[1]} exceeds max_positions={limit}")
            ids = ids[:, :limit]
        if ids.size and ids.max() >= self.config.vocab_size:
            raise IndexError(f"token id {ids.max()} >= vocab_size {self.config.vocab_size}")
        return ids

    def encode(self, src: np.ndarray | Sequence[Sequence[int]]) -> tuple[Tensor, np.ndarray]:
        """Encode a batch of (padded) source ids; returns ``(memory, key_mask)``."""
        src = np.asarray(src, dtype=np.int64) if isinstance(src, np.ndarray) else self.prepare_source(src)
        if src.ndim == 1:
            src = src[None]
        key_mask = (src != PAD)[:, None, None, :]
        x = self._embed(src)
        for i in range(self.config.layers_enc):
            pre = f"encoder.layers.{i}"
            h = self._ln(x, f"{pre}.ln1")
            x = T.add(x, self._mha(f"{pre}.self_attn", h, h, key_mask))
            x = T.add(x, self._ffn(f"{pre}.ffn", self._ln(x, f"{pre}.ln2")))
        return self._ln(x, "encoder.ln_f"), key_mask

    def check_decoder(self, which: int):
        if which not in range(1, self.config.decoder_count + 1):
            raise ConfigError(f"decoder {which} requested but model has {self.config.decoder_count} decoder(s)")

    def decode(self, memory: Tensor, src_mask: np.ndarray, tgt_in: np.ndarray, which: int = 1,
               capture: dict | None = None) -> Tensor:
        """Teacher-forced logits (B, T, V) for input prefix ids ``tgt_in`` (B, T).

        When ``capture`` is a dict it receives ``"self"`` and ``"enc-dec"``
        lists with one (B, heads, T, key_len) weight array per layer.
        """
        self.check_decoder(which)
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        L = tgt_in.shape[1]
        causal = np.tril(np.ones((L, L), dtype=bool))[None, None]
        self_cap = enc_cap = None
        if capture is not None:
            self_cap = capture.setdefault("self", [])
            enc_cap = capture.setdefault("enc-dec", [])
        x = self._embed(tgt_in)
        for i in range(self.config.layers_dec):
            pre = f"decoder{which}.layers.{i}"
            h = self._ln(x, f"{pre}.ln1")
            x = T.add(x, self._mha(f"{pre}.self_attn", h, h, causal, self_cap))
            x = T.add(x, self._mha(f"{pre}.cross_attn", self._ln(x, f"{pre}.ln2"), memory, src_mask, enc_cap))
            x = T.add(x, self._ffn(f"{pre}.ffn", self._ln(x, f"{pre}.ln3")))
        x = self._drop(self._ln(x, f"decoder{which}.ln_f"))
        return T.matmul(x, T.transpose(self._p("embed.weight")))

    def decode_step(self, memory: Tensor, src_mask: np.ndarray, prefix: Sequence[int] | np.ndarray,
                    which: int = 1, capture: bool = False):
        """Next-token logits after ``prefix`` for every row of the batch.

        ``prefix`` is (B, t) or a single sequence.  Returns ``(logits, records)``
        where logits is (B, V) (or (V,) for a single sequence) and records holds
        the final query position's attention per layer/head/kind for row 0
        when ``capture`` is set.
        """
        prefix = np.asarray(prefix, dtype=np.int64)
        single = prefix.ndim == 1
        if single:
            prefix = prefix[None]
        if prefix.shape[1] == 0:
            raise ValueError("decode_step needs a non-empty prefix starting with BOS")
        cap = {} if capture else None
        with T.no_grad():
            logits = self.decode(memory, src_mask, prefix, which, cap).data[:, -1, :]
        records = []
        if capture:
            records = attention_records(cap, row=0, query=slice(-1, None))
        return (logits[0] if single else logits), records


def attention_records(capture: dict, row: int = 0, query=slice(None)) -> list[AttentionRecord]:
    out = []
    for kind in ("self", "enc-dec"):
        for layer, w in enumerate(capture.get(kind, [])):
            for head in range(w.shape[1]):
                out.append(AttentionRecord(layer, head, kind, w[row, head, query, :].copy()))
    return out


ENCODER_PART = ("encoder.",)
DECODER_PART = ("embed.", "decoder1.")


def copy_parameters(source: Seq2SeqModel, target: Seq2SeqModel, part: str) -> list[str]:
    """Copy a block of parameters from ``source`` into ``target`` in place.

    ``part`` is ``"encoder"``, ``"decoder"`` (shared embedding plus decoder 1),
    ``"decoder->both"`` (source decoder 1 into every target decoder, plus the
    embedding) or ``"all"``.  Returns the target parameter names written.
    """
    part = part.replace("→", "->")
    if part == "all":
        if source.config.decoder_count == target.config.decoder_count:
            mapping = {n: n for n in source.params}
        else:
            mapping = {n: n for n in copy_parameters(source, target, "encoder")}
            return sorted(mapping) + copy_parameters(source, target, "decoder->both")
    elif part == "encoder":
        mapping = {n: n for n in source.params if n.startswith(ENCODER_PART)}
    elif part == "decoder":
        mapping = {n: n for n in source.params if n.startswith(DECODER_PART)}
    elif part == "decoder->both":
        if target.config.decoder_count != 2:
            raise ConfigError("decoder->both needs a two-decoder target")
        mapping = {n: n for n in source.params if n.startswith(DECODER_PART)}
        mapping.update({n.replace("decoder1.", "decoder2.", 1): n
                        for n in source.params if n.startswith("decoder1.")})
    else:
        raise ValueError(f"unknown part {part!r}")
    for dst, src in mapping.items():
        if dst not in target.params:
            raise ConfigError(f"target model has no parameter {dst!r}")
        s, t = source.params[src], target.params[dst]
        if s.shape != t.shape:
            raise T.ShapeError(f"parameter {dst!r}: source shape {s.shape} != target shape {t.shape}")
        t.data[...] = s.data
    return sorted(mapping)
