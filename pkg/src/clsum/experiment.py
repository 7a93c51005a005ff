"""Low-resource sweep: one monolingual pretraining, then every (mode, scenario, seed) finetune.

Each run directory holds ``manifest.json``, ``train_log.jsonl``,
``model.ckpt``, ``decodes.jsonl`` and ``report.json``.  Runs whose report
already exists are skipped, so an interrupted sweep resumes where it stopped.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CorpusSizes, Example, GenParams, ScenarioSpec, Vocabulary, generate_corpus, scenario_subset
from .decoding import DecodeConfig, decode_corpus, write_decodes
from .metrics import evaluate_run, read_report, write_report
from .model import ModelConfig, Seq2SeqModel
from .training import TrainConfig, finetune, pretrain_monolingual, write_manifest

log = logging.getLogger(__name__)

MODES = ("ncls", "ncls_ms", "mclas")
SCENARIOS = ("minimum", "medium", "maximum")


@dataclass(frozen=True)
class SweepConfig:
    """Defaults are the acceptance-scale sweep."""

    vocab: Vocabulary = Vocabulary(size_per_language=40)
    gen: GenParams = GenParams()
    sizes: CorpusSizes = CorpusSizes(mono_pretrain=20_000, parallel_pool=10_000, valid=200, test=1000)
    corpus_seed: int = 0
    model: ModelConfig = ModelConfig()
    pretrain: TrainConfig = TrainConfig(max_steps=6000, eval_every=500)
    finetune: TrainConfig = TrainConfig(max_steps=1500, eval_every=150)
    decode: DecodeConfig = DecodeConfig()
    modes: tuple[str, ...] = MODES
    scenarios: tuple[str, ...] = SCENARIOS
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_docs: int = 300
    scratch_scenario: str | None = "medium"  # MCLAS without pretraining, for the initialization ablation

    def __post_init__(self):
        if self.model.vocab_size != self.vocab.size:
            object.__setattr__(self, "model", replace(self.model, vocab_size=self.vocab.size))

    def to_dict(self) -> dict:
        return asdict(self)


def run_name(mode: str, scenario: str, seed: int, init: str = "pretrained") -> str:
    suffix = "" if init == "pretrained" else f"-{init}"
    return f"{mode}-{scenario}-s{seed}{suffix}"


def decode_and_score(model: Seq2SeqModel, mode: str, docs: Sequence[Example], cfg: DecodeConfig,
                     vocab: Vocabulary) -> tuple[list[dict], dict]:
    """Decode cross-lingual (and, where the model has one, monolingual) summaries and score them."""
    raw = [ex.doc for ex in docs]
    if mode == "mclas":
        records = decode_corpus(model, raw, "mclas", cfg, vocab)
    elif mode == "ncls_ms":
        records = decode_corpus(model, raw, "ncls", cfg, vocab, which=2)
        mono = decode_corpus(model, raw, "ms", cfg, vocab, which=1)
        for r, m in zip(records, mono):
            r["sum_a"] = m["sum_a"]
    elif mode == "ms":
        records = decode_corpus(model, raw, "ms", cfg, vocab)
        for r in records:
            r["sum_b"] = []
    else:
        records = decode_corpus(model, raw, "ncls", cfg, vocab)
    return records, evaluate_run(records, list(docs), mode)


@dataclass
class SweepResult:
    out_dir: Path
    reports: dict[str, dict] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def runs(self, mode: str, scenario: str, init: str = "pretrained") -> list[dict]:
        return [r for r in self.reports.values()
                if r["mode"] == mode and r["scenario"] == scenario and r.get("init", "pretrained") == init]

    def mean(self, mode: str, scenario: str, key: str = "rouge1_f1", init: str = "pretrained",
             mono: bool = False) -> float | None:
        vals = [(r["mono"] or {}).get(key) if mono else r[key] for r in self.runs(mode, scenario, init)]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None


def prepare_corpus(cfg: SweepConfig):
    return generate_corpus(ScenarioSpec("full"), cfg.sizes, cfg.gen, cfg.vocab, corpus_seed=cfg.corpus_seed)


def run_pretraining(cfg: SweepConfig, corpus, out_dir: Path) -> Path:
    ckpt = out_dir / "pretrain" / "model.ckpt"
    if ckpt.exists():
        return ckpt
    model = Seq2SeqModel(replace(cfg.model, vocab_size=cfg.vocab.size, decoder_count=1), seed=cfg.pretrain.seed)
    result = pretrain_monolingual(model, corpus.mono, cfg.pretrain, corpus.valid, out_dir / "pretrain")
    write_manifest(out_dir / "pretrain" / "manifest.json", stage="pretrain", mode="ms", seed=cfg.pretrain.seed,
                   model_config=model.config.to_dict(), train_config=cfg.pretrain.to_dict(),
                   best_step=result.best_step, evals=result.evals, checkpoint=str(ckpt))
    return ckpt


def run_one(cfg: SweepConfig, corpus, pretrained: Path | None, mode: str, scenario: str, seed: int,
            out_dir: Path, init: str = "pretrained") -> dict:
    run_dir = out_dir / "runs" / run_name(mode, scenario, seed, init)
    report_path = run_dir / "report.json"
    if report_path.exists():
        return read_report(report_path)
    spec = ScenarioSpec(scenario, seed=seed)
    train = scenario_subset(corpus.pool, spec)
    tcfg = replace(cfg.finetune, seed=seed)
    t0 = time.time()
    mcfg = replace(cfg.model, vocab_size=cfg.vocab.size)
    result = finetune(pretrained if init == "pretrained" else None, mode, train, tcfg, corpus.valid, run_dir,
                      model_config=mcfg)
    test = corpus.test[:cfg.eval_docs]
    records, report = decode_and_score(result.model, mode, test, cfg.decode, cfg.vocab)
    write_decodes(records, run_dir / "decodes.jsonl")
    report.update({"scenario": scenario, "seed": seed, "init": init, "train_size": len(train),
                   "best_step": result.best_step, "best_valid_nll": result.best_metric,
                   "seconds": time.time() - t0})
    write_manifest(run_dir / "manifest.json", stage="finetune", mode=mode, scenario=asdict(spec), seed=seed,
                   init=init, pretrained=str(pretrained) if pretrained else None,
                   model_config=result.model.config.to_dict(), train_config=tcfg.to_dict(),
                   decode_config=asdict(cfg.decode), checkpoint=str(result.checkpoint),
                   sweep=cfg.to_dict())
    write_report(report, report_path)
    return report


def run_sweep(cfg: SweepConfig, out_dir, progress=None) -> SweepResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=str) + "\n")
    res = SweepResult(out_dir)
    t0 = time.time()
    corpus = prepare_corpus(cfg)
    ckpt = run_pretraining(cfg, corpus, out_dir)
    res.timings["pretrain"] = time.time() - t0
    jobs = [(m, s, seed, "pretrained") for s in cfg.scenarios for m in cfg.modes for seed in cfg.seeds]
    if cfg.scratch_scenario:
        jobs += [("mclas", cfg.scratch_scenario, seed, "scratch") for seed in cfg.seeds]
    for mode, scenario, seed, init in jobs:
        t = time.time()
        rep = run_one(cfg, corpus, ckpt, mode, scenario, seed, out_dir, init)
        res.reports[run_name(mode, scenario, seed, init)] = rep
        res.timings[run_name(mode, scenario, seed, init)] = time.time() - t
        if progress:
            progress(f"{run_name(mode, scenario, seed, init)}: R1 {rep['rouge1_f1']:.4f} "
                     f"({time.time() - t:.0f}s)")
    res.timings["total"] = time.time() - t0
    return res


# ---------------------------------------------------------------------------
# comparison tables
# ---------------------------------------------------------------------------

SYSTEM_ORDER = ("ncls", "ncls_ms", "mclas", "mclas-scratch")
ABSENT = "absent"


def collect_reports(root) -> list[dict]:
    """Every ``report.json`` under ``root`` that names a mode, in path order."""
    out = []
    for path in sorted(Path(root).rglob("report.json")):
        rep = read_report(path)
        if rep.get("mode"):
            rep["path"] = str(path)
            out.append(rep)
    return out


def system_name(report: dict) -> str:
    init = report.get("init", "pretrained")
    return report["mode"] if init == "pretrained" else f"{report['mode']}-{init}"


def _value(report: dict, table: str, key: str) -> float | None:
    if table == "mono":
        return (report.get("mono") or {}).get(key)
    return report.get(key)


def seed_stats(values: Sequence[float]) -> dict | None:
    if not values:
        return None
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()), "max": float(v.max()),
            "n": int(v.size)}


def compare_tables(reports: Sequence[dict]) -> dict:
    """Seed statistics per (system, scenario) for the ROUGE, length and monolingual tables.

    A cell with no contributing run is ``None``.
    """
    systems = sorted({system_name(r) for r in reports},
                     key=lambda s: (SYSTEM_ORDER.index(s) if s in SYSTEM_ORDER else len(SYSTEM_ORDER), s))
    scenarios = sorted({r.get("scenario", "?") for r in reports},
                       key=lambda s: (SCENARIOS.index(s) if s in SCENARIOS else len(SCENARIOS), s))
    specs = {"rouge": [("rouge1_f1", "main"), ("rouge2_f1", "main"), ("rougeL_f1", "main")],
             "length": [("len_gen", "main"), ("len_gold", "main"), ("len_delta", "main")],
             "mono": [("rouge1_f1", "mono"), ("rouge2_f1", "mono"), ("rougeL_f1", "mono")]}
    tables: dict = {"systems": systems, "scenarios": scenarios}
    for name, keys in specs.items():
        grid = {}
        for system in systems:
            for scenario in scenarios:
                runs = [r for r in reports if system_name(r) == system and r.get("scenario", "?") == scenario]
                cell = {}
                for key, src in keys:
                    vals = [_value(r, src, key) for r in runs]
                    cell[key] = seed_stats([v for v in vals if v is not None])
                grid[(system, scenario)] = cell if any(cell.values()) else None
        tables[name] = grid
    return tables


def _fmt(stats: dict | None, scale: float = 1.0) -> str:
    if stats is None:
        return ABSENT
    return f"{stats['mean'] * scale:.2f} ± {stats['std'] * scale:.2f} (n={stats['n']})"


def render_compare(tables: dict) -> str:
    """Markdown rendering; ROUGE values are shown in points (x100)."""
    systems, scenarios = tables["systems"], tables["scenarios"]
    head = "| system | " + " | ".join(scenarios) + " |\n|---|" + "---|" * len(scenarios) + "\n"

    def block(title, table, key, scale):
        rows = []
        for system in systems:
            cells = [_fmt((tables[table][(system, s)] or {}).get(key), scale) for s in scenarios]
            rows.append(f"| {system} | " + " | ".join(cells) + " |")
        return f"### {title}\n\n" + head + "\n".join(rows) + "\n"

    parts = ["## Cross-lingual ROUGE (seed mean ± std, points)\n"]
    for key, label in (("rouge1_f1", "ROUGE-1 F1"), ("rouge2_f1", "ROUGE-2 F1"), ("rougeL_f1", "ROUGE-L F1")):
        parts.append(block(label, "rouge", key, 100.0))
    parts.append("## Generated S^B length\n")
    for key, label in (("len_gen", "mean generated length"), ("len_gold", "mean gold length"),
                       ("len_delta", "generated minus gold")):
        parts.append(block(label, "length", key, 1.0))
    parts.append("## Monolingual ROUGE after finetuning (points)\n")
    for key, label in (("rouge1_f1", "ROUGE-1 F1"), ("rougeL_f1", "ROUGE-L F1")):
        parts.append(block(label, "mono", key, 100.0))
    return "\n".join(parts)
