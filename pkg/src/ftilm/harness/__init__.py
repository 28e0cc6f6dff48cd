"""Toy-scale data, models, training recipes, metrics and CLI."""

from .config import RunConfig, load_config
from .data import ToyCorpus, Vocab, gen_data
from .metrics import evaluate, sweep
from .model import ToyFTModel
from .pipeline import run_pipeline
from .train import mwer_finetune, pretrain_ilm, train_ft

__all__ = [
    "RunConfig", "load_config", "ToyCorpus", "Vocab", "gen_data", "evaluate", "sweep",
    "ToyFTModel", "run_pipeline", "mwer_finetune", "pretrain_ilm", "train_ft",
]
