"""Monolingual pretraining, mode-specific finetuning and the step loop they share.

Encoder and decoder parameters are updated by two Adam optimizers with their
own base rate and warmup.  The shared token embedding is tied to the output
projection and therefore belongs to the decoder group.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Example
from .model import ConfigError, ModelConfig, Seq2SeqModel, copy_parameters
from .objectives import TrainingMode, evaluate_nll, loss_parts
from .optim import OptimizerState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr_enc: float = 0.05
    base_lr_dec: float = 0.05
    warmup_enc: int = 200
    warmup_dec: int = 100
    batch_size: int = 16
    accum: int = 1
    max_steps: int = 1000
    eval_every: int = 100
    patience: int | None = None  # evaluations without improvement before stopping
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-9
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1 or self.accum < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ConfigError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


PRESETS = {
    "desk": TrainConfig(),
    "full": TrainConfig(base_lr_enc=0.005, base_lr_dec=0.2, warmup_enc=10_000, warmup_dec=5_000, accum=5),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def split_groups(model: Seq2SeqModel):
    enc = {n: p for n, p in model.params.items() if n.startswith("encoder.")}
    dec = {n: p for n, p in model.params.items() if not n.startswith("encoder.")}
    return enc, dec


@dataclass
class TrainState:
    model: Seq2SeqModel
    mode: TrainingMode
    config: TrainConfig
    opt_enc: OptimizerState
    opt_dec: OptimizerState
    step: int = 0
    micro_batches: int = 0
    order: np.ndarray | None = None
    cursor: int = 0
    batch_rng: np.random.Generator | None = None
    history: list[dict] = field(default_factory=list)

    @classmethod
    def fresh(cls, model: Seq2SeqModel, mode, config: TrainConfig) -> "TrainState":
        mode = TrainingMode(mode)
        if mode.decoder_count != model.config.decoder_count:
            raise ConfigError(f"mode {mode.value} needs {mode.decoder_count} decoder(s), "
                              f"model has {model.config.decoder_count}")
        kw = dict(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        model.rng = np.random.default_rng([config.seed, 1])
        return cls(model=model, mode=mode, config=config,
                   opt_enc=OptimizerState(config.base_lr_enc, config.warmup_enc, **kw),
                   opt_dec=OptimizerState(config.base_lr_dec, config.warmup_dec, **kw),
                   batch_rng=np.random.default_rng([config.seed, 0]))

    def next_examples(self, data: Sequence[Example], n: int) -> list[Example]:
        out = []
        while len(out) < n:
            if self.order is None or self.cursor >= len(self.order):
                self.order = self.batch_rng.permutation(len(data))
                self.cursor = 0
            take = min(n - len(out), len(self.order) - self.cursor)
            out.extend(data[i] for i in self.order[self.cursor:self.cursor + take])
            self.cursor += take
        return out


def train_step(state: TrainState, data: Sequence[Example]) -> dict:
    """One optimizer update over ``accum`` micro-batches; returns the log record.

    Each micro-batch loss is divided by the full step size, so accumulated
    gradients equal those of a single batch of ``batch_size * accum`` examples.
    """
    cfg = state.config
    model = state.model
    model.train()
    examples = state.next_examples(data, cfg.batch_size * cfg.accum)
    denom = float(len(examples))
    model.zero_grad()
    total, part_a, part_b = 0.0, None, None
    for k in range(cfg.accum):
        micro = examples[k * cfg.batch_size:(k + 1) * cfg.batch_size]
        loss, a, b = loss_parts(state.mode, model, micro, denom)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {state.step + 1} (micro-batch {k}, "
                                f"lr_enc={state.opt_enc.current_lr():.3g}, lr_dec={state.opt_dec.current_lr():.3g})")
        loss.backward()
        state.micro_batches += 1
        total += value
        part_a = None if a is None else (part_a or 0.0) + a
        part_b = None if b is None else (part_b or 0.0) + b
    enc, dec = split_groups(model)
    lr_enc = adam_step(enc, {n: p.grad for n, p in enc.items()}, state.opt_enc)
    lr_dec = adam_step(dec, {n: p.grad for n, p in dec.items()}, state.opt_dec)
    model.zero_grad()
    state.step += 1
    record = {"step": state.step, "lr_enc": lr_enc, "lr_dec": lr_dec, "loss": total,
              "loss_a_part": part_a, "loss_b_part": part_b}
    state.history.append(record)
    return record


def selection_metric(model: Seq2SeqModel, mode: TrainingMode, valid: Sequence[Example], batch_size: int) -> dict:
    """Validation per-token NLL used for model selection (S^A for MS, S^B otherwise)."""
    rep = evaluate_nll(model, valid, mode, batch_size)
    key = rep.nll_a if mode is TrainingMode.MS else rep.nll_b
    acc = rep.acc_a if mode is TrainingMode.MS else rep.acc_b
    return {"valid_nll": key, "valid_ppl": math.exp(key), "valid_acc": acc,
            "valid_nll_a": rep.nll_a, "valid_nll_b": rep.nll_b}


@dataclass
class TrainResult:
    model: Seq2SeqModel
    state: TrainState
    best_step: int
    best_metric: float | None
    evals: list[dict]
    checkpoint: Path | None = None


def run_training(state: TrainState, data: Sequence[Example], valid: Sequence[Example] | None = None,
                 log_path=None) -> TrainResult:
    """Train to ``max_steps`` with periodic validation; restores the best validated weights."""
    if not data:
        raise TrainingError("training split is empty")
    cfg = state.config
    evals: list[dict] = []
    best_metric, best_step, best_params = None, state.step, None
    bad_evals = 0
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a") if log_path else None
    try:
        if valid:
            m = selection_metric(state.model, state.mode, valid, cfg.eval_batch_size)
            evals.append({"step": state.step, **m})
            if log_fh:
                log_fh.write(json.dumps({"eval": True, "step": state.step, **m}) + "\n")
            best_metric, best_params = m["valid_nll"], state.model.state_dict()
        while state.step < cfg.max_steps:
            record = train_step(state, data)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            if valid and (state.step % cfg.eval_every == 0 or state.step == cfg.max_steps):
                m = selection_metric(state.model, state.mode, valid, cfg.eval_batch_size)
                evals.append({"step": state.step, **m})
                if log_fh:
                    log_fh.write(json.dumps({"eval": True, "step": state.step, **m}) + "\n")
                log.debug("step %d valid nll %.4f", state.step, m["valid_nll"])
                if m["valid_nll"] < best_metric:
                    best_metric, best_step, best_params = m["valid_nll"], state.step, state.model.state_dict()
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if cfg.patience is not None and bad_evals >= cfg.patience:
                        break
    finally:
        if log_fh:
            log_fh.close()
    if best_params is not None:
        state.model.load_state_dict(best_params)
    else:
        best_step = state.step
    state.model.eval()
    return TrainResult(state.model, state, best_step, best_metric, evals)


# ---------------------------------------------------------------------------
# checkpoints with optimizer state
# ---------------------------------------------------------------------------

def save_train_state(state: TrainState, path) -> Path:
    extra = {}
    for tag, opt in (("enc", state.opt_enc), ("dec", state.opt_dec)):
        for name in opt.m:
            extra[f"optim.{tag}.m.{name}"] = opt.m[name]
            extra[f"optim.{tag}.v.{name}"] = opt.v[name]
    meta = {
        "mode": state.mode.value,
        "train_config": state.config.to_dict(),
        "step": state.step,
        "micro_batches": state.micro_batches,
        "opt_steps": [state.opt_enc.step_count, state.opt_dec.step_count],
        "cursor": state.cursor,
        "order": None if state.order is None else state.order.tolist(),
        "batch_rng": state.batch_rng.bit_generator.state,
        "dropout_rng": state.model.rng.bit_generator.state,
    }
    tensors = state.model.state_dict()
    tensors.update(extra)
    return save_checkpoint(path, tensors, config=state.model.config.to_dict(), meta=meta)


def load_train_state(path) -> TrainState:
    tensors, config, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(config)
    model = Seq2SeqModel(cfg, params={n: v for n, v in tensors.items() if not n.startswith("optim.")})
    if "train_config" not in meta:
        raise TrainingError(f"{path} holds model weights only, not a resumable training state")
    tcfg = TrainConfig.from_dict(meta["train_config"])
    state = TrainState.fresh(model, meta["mode"], tcfg)
    state.step = meta["step"]
    state.micro_batches = meta["micro_batches"]
    state.opt_enc.step_count, state.opt_dec.step_count = meta["opt_steps"]
    for tag, opt in (("enc", state.opt_enc), ("dec", state.opt_dec)):
        for n, v in tensors.items():
            if n.startswith(f"optim.{tag}.m."):
                opt.m[n[len(f"optim.{tag}.m."):]] = v.copy()
            elif n.startswith(f"optim.{tag}.v."):
                opt.v[n[len(f"optim.{tag}.v."):]] = v.copy()
    state.cursor = meta["cursor"]
    state.order = None if meta["order"] is None else np.asarray(meta["order"], dtype=np.int64)
    state.batch_rng.bit_generator.state = meta["batch_rng"]
    model.rng.bit_generator.state = meta["dropout_rng"]
    return state


# ---------------------------------------------------------------------------
# the two stages
# ---------------------------------------------------------------------------

def pretrain_monolingual(model: Seq2SeqModel, mono: Sequence[Example], config: TrainConfig,
                         valid: Sequence[Example] | None = None, out_dir=None) -> TrainResult:
    """Stage one: fit ``[BOS] S^A [EOS]`` on monolingual pairs."""
    for i, ex in enumerate(mono):
        if ex.sum_a is None:
            raise TrainingError(f"monolingual example {i} lacks sum_a")
    state = TrainState.fresh(model, TrainingMode.MS, config)
    out_dir = Path(out_dir) if out_dir else None
    result = run_training(state, mono, valid, out_dir / "train_log.jsonl" if out_dir else None)
    if out_dir:
        result.checkpoint = model.save(out_dir / "model.ckpt", meta={"mode": "ms", "best_step": result.best_step})
    return result


def init_for_mode(pretrained: Seq2SeqModel | None, mode, model_config: ModelConfig | None = None,
                  seed: int = 0) -> Seq2SeqModel:
    """Build a model for ``mode``, fully initialised from ``pretrained`` when given.

    NCLS+MS gets the pretrained encoder and the pretrained decoder copied into
    both of its decoders; the single-decoder modes copy everything.
    """
    mode = TrainingMode(mode)
    base = pretrained.config if pretrained is not None else model_config
    if base is None:
        raise ConfigError("need a pretrained model or a model config")
    cfg = replace(base, decoder_count=mode.decoder_count)
    model = Seq2SeqModel(cfg, seed=seed)
    if pretrained is not None:
        if pretrained.config.decoder_count != 1:
            raise ConfigError("pretrained monolingual model must have a single decoder")
        if mode is TrainingMode.NCLS_MS:
            copy_parameters(pretrained, model, "encoder")
            copy_parameters(pretrained, model, "decoder->both")
        else:
            copy_parameters(pretrained, model, "all")
    return model


def finetune(pretrained, mode, parallel: Sequence[Example], config: TrainConfig,
             valid: Sequence[Example] | None = None, out_dir=None,
             model_config: ModelConfig | None = None) -> TrainResult:
    """Stage two on a (small) parallel split.

    ``pretrained`` is a checkpoint path, a model, or ``None`` for training
    from scratch (then ``model_config`` is required).
    """
    if not parallel:
        raise TrainingError("parallel scenario split is empty")
    if isinstance(pretrained, (str, Path)):
        pretrained = Seq2SeqModel.load(pretrained)
    model = init_for_mode(pretrained, mode, model_config, seed=config.seed)
    state = TrainState.fresh(model, mode, config)
    out_dir = Path(out_dir) if out_dir else None
    result = run_training(state, parallel, valid, out_dir / "train_log.jsonl" if out_dir else None)
    if out_dir:
        result.checkpoint = model.save(out_dir / "model.ckpt",
                                       meta={"mode": TrainingMode(mode).value, "best_step": result.best_step})
    return result


def write_manifest(path, **fields) -> Path:
    """Run manifest: mode, scenario, seed, preset, resolved configs and artifact paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(fields, indent=2, sort_keys=True, default=str) + "\n")
    return path
