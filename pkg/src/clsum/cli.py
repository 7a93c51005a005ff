"""``clsum`` command line: gen-corpus | train | decode | eval | probe | compare | sweep.

Configuration resolves as config file < environment < flags.  The config
file is INI with sections ``[corpus]``, ``[model]``, ``[train]``,
``[decode]``, ``[probe]`` and ``[paths]``; values are parsed as JSON when
possible (so ``doc_len = [16, 24]`` works) and kept as strings otherwise.
``CLSUM_OUTPUT_ROOT`` sets ``paths.output_root``.  Every command prints the
resolved config and saves it next to its outputs.

Exit status: 0 success, 1 runtime or validation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .corpus import CorpusError, CorpusSizes, Example, GenParams, ScenarioSpec, Vocabulary, generate_corpus, \
    read_corpus, scenario_subset, write_corpus_dir
from .decoding import DecodeConfig, MalformedOutputError, decode_corpus, read_decodes, write_decodes
from .experiment import MODES, SweepConfig, collect_reports, compare_tables, decode_and_score, render_compare, \
    run_sweep
from .metrics import evaluate_run, write_report
from .model import ConfigError, ModelConfig, Seq2SeqModel
from .probe import ProbeError, classify_heads, emit_all_heatmaps, generate_probe_set, label_percentages, \
    write_summary
from .training import PRESETS, TrainConfig, TrainingError, finetune, pretrain_monolingual, write_manifest

log = logging.getLogger("clsum")

ENV_OUTPUT_ROOT = "CLSUM_OUTPUT_ROOT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def default_config(sweep: bool = False) -> dict:
    """Built-in defaults; ``sweep`` starts from the acceptance-scale sweep instead of the small desk corpus."""
    base = SweepConfig()
    vocab = base.vocab if sweep else Vocabulary()
    sizes = base.sizes if sweep else CorpusSizes()
    gen = asdict(base.gen if sweep else GenParams())
    train = {"preset": "desk", **TrainConfig().to_dict()}
    if sweep:
        train.update(max_steps=base.finetune.max_steps, eval_every=base.finetune.eval_every)
    return {
        "corpus": {"size_per_language": vocab.size_per_language, "seed": base.corpus_seed if sweep else 0,
                   **asdict(sizes), **{k: list(v) if isinstance(v, tuple) else v for k, v in gen.items()}},
        "model": ModelConfig().to_dict(),
        "train": train,
        "decode": asdict(base.decode if sweep else DecodeConfig()),
        "probe": {"count": 50, "n": 4, "doc_len": 20, "seed": 0},
        "paths": {"output_root": "clsum-out"},
    }


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise UsageError(f"config file {path} not found or unreadable")
    return {s: {k: _parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}


def merge(base: dict, over: dict, origin: str) -> dict:
    out = {s: dict(v) for s, v in base.items()}
    for section, values in over.items():
        if section not in out:
            raise UsageError(f"{origin}: unknown config section [{section}]")
        for key, value in values.items():
            if key not in out[section]:
                raise UsageError(f"{origin}: unknown key {section}.{key}")
            out[section][key] = value
    return out


def resolve_config(args) -> dict:
    cfg = default_config(sweep=getattr(args, "command", None) == "sweep")
    if getattr(args, "config", None):
        cfg = merge(cfg, load_config_file(args.config), str(args.config))
    if os.environ.get(ENV_OUTPUT_ROOT):
        cfg["paths"]["output_root"] = os.environ[ENV_OUTPUT_ROOT]
    flags: dict = {}
    for section, key, value in getattr(args, "overrides", []):
        flags.setdefault(section, {})[key] = value
    for item in getattr(args, "set", None) or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        flags.setdefault(section, {})[key] = _parse_value(raw)
    return merge(cfg, flags, "flags")


def announce(cfg: dict, out_dir: Path | None) -> None:
    text = json.dumps(cfg, indent=2, sort_keys=True)
    print("resolved config:\n" + text, flush=True)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(text + "\n")


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _pick(cls, d: dict):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in _tupled(d).items() if k in names})


def vocab_of(cfg: dict) -> Vocabulary:
    return Vocabulary(size_per_language=int(cfg["corpus"]["size_per_language"]))


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    name = t.pop("preset", "desk")
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    # values equal to the desk default defer to the preset, explicit changes win
    desk = TrainConfig().to_dict()
    changed = {k: v for k, v in t.items() if k in desk and v != desk[k]}
    return replace(PRESETS[name], **changed)


def output_path(cfg: dict, given, *default: str) -> Path:
    return Path(given) if given else Path(cfg["paths"]["output_root"], *default)


# ---------------------------------------------------------------------------
# flag helpers
# ---------------------------------------------------------------------------

class Override(argparse.Action):
    """Store ``value`` under ``(section, key)`` in ``namespace.overrides``."""

    def __init__(self, option_strings, dest, section, key=None, const_value=None, **kw):
        self.section, self.key, self.const_value = section, key or dest, const_value
        if const_value is not None:
            kw["nargs"] = 0
        super().__init__(option_strings, dest, **kw)

    def __call__(self, parser, namespace, values, option_string=None):
        value = self.const_value if self.const_value is not None else values
        if not hasattr(namespace, "overrides") or namespace.overrides is None:
            namespace.overrides = []
        namespace.overrides.append((self.section, self.key, value))


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (lowest precedence)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(overrides=[])


def add_flag(p, flag, section, key, **kw):
    p.add_argument(flag, action=Override, section=section, key=key, dest=f"{section}_{key}",
                   default=argparse.SUPPRESS, **kw)


def add_model_flags(p):
    for key in ("layers_enc", "layers_dec", "heads", "d_model", "d_ff", "max_positions"):
        add_flag(p, "--" + key.replace("_", "-"), "model", key, type=int)
    add_flag(p, "--dropout", "model", "dropout_p", type=float)


def add_train_flags(p):
    add_flag(p, "--preset", "train", "preset", choices=sorted(PRESETS))
    add_flag(p, "--max-steps", "train", "max_steps", type=int)
    add_flag(p, "--eval-every", "train", "eval_every", type=int)
    add_flag(p, "--batch-size", "train", "batch_size", type=int)
    add_flag(p, "--accum", "train", "accum", type=int)
    add_flag(p, "--lr-enc", "train", "base_lr_enc", type=float)
    add_flag(p, "--lr-dec", "train", "base_lr_dec", type=float)
    add_flag(p, "--warmup-enc", "train", "warmup_enc", type=int)
    add_flag(p, "--warmup-dec", "train", "warmup_dec", type=int)
    add_flag(p, "--patience", "train", "patience", type=int)


def add_decode_flags(p):
    add_flag(p, "--beam", "decode", "beam_size", type=int)
    add_flag(p, "--alpha", "decode", "length_penalty_alpha", type=float)
    add_flag(p, "--max-len", "decode", "max_len", type=int)
    add_flag(p, "--no-trigram-block", "decode", "trigram_block", const_value=False)
    add_flag(p, "--no-constraint", "decode", "language_constraint", const_value=False)


def add_corpus_flags(p):
    add_flag(p, "--size-per-language", "corpus", "size_per_language", type=int)
    add_flag(p, "--corpus-seed", "corpus", "seed", type=int)
    add_flag(p, "--mono", "corpus", "mono_pretrain", type=int)
    add_flag(p, "--pool", "corpus", "parallel_pool", type=int)
    add_flag(p, "--valid", "corpus", "valid", type=int)
    add_flag(p, "--test", "corpus", "test", type=int)
    add_flag(p, "--repeat", "corpus", "repeat", type=int)
    add_flag(p, "--max-repeat", "corpus", "max_repeat", type=int)
    add_flag(p, "--n-max", "corpus", "n_max", type=int)
    add_flag(p, "--b-extra", "corpus", "b_extra", type=int)
    add_flag(p, "--doc-len", "corpus", "doc_len", type=int, nargs=2, metavar=("MIN", "MAX"))
    add_flag(p, "--salient-count", "corpus", "salient_count", type=int, nargs=2, metavar=("MIN", "MAX"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def load_split(path, need_b: bool = True) -> tuple[list[Example], Vocabulary]:
    examples, vocab, kind = read_corpus(path)
    if need_b and kind != "parallel":
        raise UsageError(f"{path} is a {kind} split; a parallel split is needed here")
    return examples, vocab


def cmd_gen_corpus(args, cfg) -> int:
    c = cfg["corpus"]
    out = output_path(cfg, args.out, "corpus")
    announce(cfg, out)
    spec = ScenarioSpec(args.scenario, args.fraction, seed=args.scenario_seed)
    corpus = generate_corpus(spec, _pick(CorpusSizes, c), _pick(GenParams, c), vocab_of(cfg), corpus_seed=c["seed"])
    paths = write_corpus_dir(corpus, out)
    write_manifest(out / "manifest.json", stage="gen-corpus", config=cfg, scenario=asdict(spec),
                   files={k: str(v) for k, v in paths.items()})
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    if args.stage == "finetune" and not args.init:
        raise UsageError("finetune needs --init CHECKPOINT (or --init scratch for a model trained from scratch)")
    if args.stage == "finetune" and not args.mode:
        raise UsageError("finetune needs --mode")
    corpus_dir = Path(args.corpus)
    tcfg = replace(train_config(cfg), seed=args.seed)
    if args.stage == "pretrain":
        out = output_path(cfg, args.out, "pretrain")
        announce(cfg, out)
        mono, vocab = load_split(corpus_dir / "mono.txt", need_b=False)
        valid, _ = load_split(corpus_dir / "valid.txt")
        mcfg = replace(_pick(ModelConfig, cfg["model"]), vocab_size=vocab.size, decoder_count=1)
        model = Seq2SeqModel(mcfg, seed=args.seed)
        result = pretrain_monolingual(model, mono, tcfg, valid, out)
        mode, init, scenario = "ms", None, None
    else:
        init = None if args.init == "scratch" else args.init
        scenario = ScenarioSpec(args.scenario, args.fraction, seed=args.seed)
        out = output_path(cfg, args.out, "runs",
                          f"{args.mode}-{scenario.name}-s{args.seed}" + ("-scratch" if init is None else ""))
        announce(cfg, out)
        pool, vocab = load_split(corpus_dir / "pool.txt")
        valid, _ = load_split(corpus_dir / "valid.txt")
        train = scenario_subset(pool, scenario)
        mcfg = replace(_pick(ModelConfig, cfg["model"]), vocab_size=vocab.size)
        if init is not None and not Path(init).exists():
            raise UsageError(f"--init checkpoint {init} does not exist")
        result = finetune(init, args.mode, train, tcfg, valid, out, model_config=mcfg)
        mode = args.mode
        print(f"finetuning on {len(train)} parallel examples")
    write_manifest(out / "manifest.json", stage=args.stage, mode=mode, seed=args.seed, init=init,
                   scenario=asdict(scenario) if scenario else None, corpus=str(corpus_dir), config=cfg,
                   model_config=result.model.config.to_dict(), train_config=tcfg.to_dict(),
                   best_step=result.best_step, best_valid_nll=result.best_metric,
                   checkpoint=str(result.checkpoint), log=str(out / "train_log.jsonl"))
    print(f"best step {result.best_step} valid nll {result.best_metric}; checkpoint {result.checkpoint}")
    return EXIT_OK


def _model_mode(model: Seq2SeqModel, meta_mode: str | None, flag: str | None) -> str:
    mode = flag or meta_mode
    if mode not in MODES + ("ms",):
        raise UsageError(f"cannot tell the decoding mode (checkpoint says {meta_mode!r}); pass --mode")
    if (mode == "ncls_ms") != (model.config.decoder_count == 2):
        raise UsageError(f"mode {mode} does not match a {model.config.decoder_count}-decoder checkpoint")
    return mode


def cmd_decode(args, cfg) -> int:
    model = Seq2SeqModel.load(args.ckpt)
    _, _, meta = load_checkpoint(args.ckpt)
    mode = _model_mode(model, meta.get("mode"), args.mode)
    out = Path(args.out) if args.out else Path(args.ckpt).parent / "decodes.jsonl"
    announce(cfg, out.parent)
    docs, vocab = load_split(args.input, need_b=False)
    docs = docs[:args.limit] if args.limit else docs
    dcfg = _pick(DecodeConfig, cfg["decode"])
    if all(d.sum_b is not None for d in docs):
        records, report = decode_and_score(model, mode, docs, dcfg, vocab)
        print(f"ROUGE-1 F1 {report['rouge1_f1']:.4f}")
    else:
        records = decode_corpus(model, [d.doc for d in docs], mode, dcfg, vocab)
    write_decodes(records, out)
    write_manifest(out.with_suffix(".manifest.json"), stage="decode", mode=mode, checkpoint=str(args.ckpt),
                   input=str(args.input), limit=args.limit, config=cfg)
    print(f"wrote {len(records)} decodes to {out}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    out = Path(args.out) if args.out else Path(args.decodes).parent / "report.json"
    announce(cfg, out.parent)
    decodes = read_decodes(args.decodes)
    refs, _ = load_split(args.refs)
    refs = refs[:len(decodes)] if args.prefix else refs
    report = evaluate_run(decodes, refs, args.mode)
    for key in ("scenario", "seed", "init"):
        if getattr(args, key) is not None:
            report[key] = getattr(args, key)
    write_report(report, out)
    mono = report["mono"]["rouge1_f1"] if report["mono"] else None
    print(f"R1 {report['rouge1_f1']:.4f} R2 {report['rouge2_f1']:.4f} RL {report['rougeL_f1']:.4f} "
          f"len {report['len_gen']:.2f}/{report['len_gold']:.2f} mono R1 {mono}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_probe(args, cfg) -> int:
    model = Seq2SeqModel.load(args.ckpt)
    p = cfg["probe"]
    out = output_path(cfg, args.out, "probe")
    announce(cfg, out)
    vocab = vocab_of(cfg) if args.size_per_language is None else Vocabulary(args.size_per_language)
    if vocab.size != model.config.vocab_size:
        raise UsageError(f"vocabulary size {vocab.size} does not match the checkpoint ({model.config.vocab_size}); "
                         "pass --size-per-language")
    probe = generate_probe_set(vocab, int(p["count"]), int(p["n"]), int(p["doc_len"]), int(p["seed"]))
    maps, classes = classify_heads(model, probe)
    emit_all_heatmaps(maps, out / "heatmaps")
    write_summary(classes, out / "summary.json")
    for c in classes:
        stats = " ".join(f"{k}={v:.3f}" for k, v in c.stats.items())
        print(f"{c.kind:7s} layer {c.layer} head {c.head}: {','.join(c.labels) or '-':24s} {stats}")
    print(json.dumps(label_percentages(classes), indent=2))
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    reports = []
    for root in args.runs:
        reports += collect_reports(root)
    if not reports:
        raise UsageError(f"no report.json files found under {', '.join(args.runs)}")
    text = render_compare(compare_tables(reports))
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    out = output_path(cfg, args.out, "sweep")
    announce(cfg, out)
    c = cfg["corpus"]
    vocab = vocab_of(cfg)
    sweep = SweepConfig(vocab=vocab, gen=_pick(GenParams, c), sizes=_pick(CorpusSizes, c), corpus_seed=c["seed"],
                        model=replace(_pick(ModelConfig, cfg["model"]), vocab_size=vocab.size),
                        pretrain=replace(train_config(cfg), max_steps=args.pretrain_steps,
                                         eval_every=args.pretrain_eval_every),
                        finetune=train_config(cfg),
                        decode=_pick(DecodeConfig, cfg["decode"]), modes=tuple(args.modes),
                        scenarios=tuple(args.scenarios), seeds=tuple(args.seeds), eval_docs=args.eval_docs,
                        scratch_scenario=None if args.no_scratch else "medium")
    run_sweep(sweep, out, progress=print)
    print(render_compare(compare_tables(collect_reports(out / "runs"))))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clsum", description=__doc__.split("\n\n")[0],
                                 epilog="exit status: 0 ok, 1 failure, 2 usage error; "
                                        f"{ENV_OUTPUT_ROOT} sets the output root")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus splits")
    add_common(p)
    add_corpus_flags(p)
    p.add_argument("--out", help="output directory (default OUTPUT_ROOT/corpus)")
    p.add_argument("--scenario", default="full", help="scenario subset to also write")
    p.add_argument("--fraction", type=float, help="parallel fraction (overrides the scenario default)")
    p.add_argument("--scenario-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="pretrain on monolingual data or finetune on a scenario")
    add_common(p)
    add_model_flags(p)
    add_train_flags(p)
    p.add_argument("--stage", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--corpus", required=True, help="directory written by gen-corpus")
    p.add_argument("--init", help="pretrained checkpoint for finetuning, or 'scratch'")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scenario", default="minimum")
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam-search decode a corpus split")
    add_common(p)
    add_decode_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="corpus file whose docs are decoded")
    p.add_argument("--mode", choices=MODES + ("ms",), help="defaults to the mode stored in the checkpoint")
    p.add_argument("--limit", type=int, help="decode only the first N documents")
    p.add_argument("--out", help="decodes.jsonl path (default next to the checkpoint)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score decodes against references")
    add_common(p)
    p.add_argument("--decodes", required=True)
    p.add_argument("--refs", required=True, help="parallel corpus file, indexed by doc_id")
    p.add_argument("--mode", choices=MODES + ("ms",))
    p.add_argument("--prefix", action="store_true", help="score against the first len(decodes) references")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("pretrained", "scratch"))
    p.add_argument("--out", help="report.json path (default next to the decodes)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="classify attention heads and draw heatmaps")
    add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--size-per-language", type=int, help="vocabulary of the checkpoint's corpus")
    add_flag(p, "--count", "probe", "count", type=int)
    add_flag(p, "--n", "probe", "n", type=int)
    add_flag(p, "--doc-len", "probe", "doc_len", type=int)
    add_flag(p, "--probe-seed", "probe", "seed", type=int)
    p.add_argument("--out", help="output directory (default OUTPUT_ROOT/probe)")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("compare", help="systems x scenarios tables over evaluated runs")
    add_common(p)
    p.add_argument("runs", nargs="+", help="directories searched recursively for report.json")
    p.add_argument("--out", help="also write the markdown tables here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="pretrain once, then every mode x scenario x seed finetune, then compare",
                       description="Defaults reproduce the acceptance sweep; --max-steps and --eval-every "
                                   "set the finetuning budget.")
    add_common(p)
    add_corpus_flags(p)
    add_model_flags(p)
    add_train_flags(p)
    add_decode_flags(p)
    p.add_argument("--pretrain-steps", type=int, default=SweepConfig().pretrain.max_steps)
    p.add_argument("--pretrain-eval-every", type=int, default=SweepConfig().pretrain.eval_every)
    p.add_argument("--modes", nargs="+", default=list(MODES), choices=MODES)
    p.add_argument("--scenarios", nargs="+", default=["minimum", "medium", "maximum"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--eval-docs", type=int, default=SweepConfig().eval_docs)
    p.add_argument("--no-scratch", action="store_true", help="skip the from-scratch MCLAS runs")
    p.add_argument("--out", help="sweep directory (default OUTPUT_ROOT/sweep)")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"clsum {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ConfigError, TrainingError, CheckpointError, ProbeError, MalformedOutputError,
            KeyError, ValueError, FileNotFoundError) as e:
        print(f"clsum {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
