"""Cross-lingual summarization lab: autodiff engine, mini Transformer, synthetic corpus,
training objectives, constrained decoding, metrics and attention probing."""
from .corpus import CorpusSizes, Example, GenParams, ScenarioSpec, Vocabulary, generate_corpus, read_corpus, \
    scenario_subset, translate_tokens, write_corpus
from .decoding import DecodeConfig, beam_search, decode_corpus
from .experiment import SweepConfig, compare_tables, render_compare, run_sweep
from .metrics import bws_score, evaluate_run, fleiss_kappa, rouge_l, rouge_n
from .model import ModelConfig, Seq2SeqModel
from .objectives import TrainingMode, build_concat_target, loss_mclas, loss_ncls, loss_ncls_ms
from .probe import classify_heads, collect_attention, emit_all_heatmaps
from .training import TrainConfig, finetune, pretrain_monolingual

__version__ = "0.1.0"
