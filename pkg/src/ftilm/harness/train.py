"""Training recipes: ILM pretraining, transducer training, MWER finetuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..decode import beam_search
from ..errors import TrainingDivergedError
from ..factorization import TRAINING_WEIGHTS, FusionWeights
from ..ilm import FrozenLM, ToyNeuralLM, pretrain
from ..mwer import NBestItem, band_from_alignment, mwer_gradients, mwer_loss, word_edit_distance
from .config import RunConfig, stream
from .data import ToyCorpus
from .metrics import evaluate
from .model import ToyFTModel

log = logging.getLogger(__name__)


def pretrain_ilm(corpus: ToyCorpus, cfg: RunConfig):
    """Fit a fresh LM on the text corpus and return it frozen, with its loss curve."""
    lm = ToyNeuralLM(corpus.vocab.size, order=cfg.lm_order, embed_dim=cfg.lm_embed_dim,
                     hidden_dim=cfg.lm_hidden_dim, bos_id=corpus.vocab.eos_id, rng=stream(cfg.seed, "lm_init"))
    res = pretrain(lm, corpus.text_ids(), steps=cfg.lm_steps, learning_rate=cfg.lm_lr,
                   momentum=cfg.lm_momentum, rng=stream(cfg.seed, "lm_batch"))
    return FrozenLM(res.lm), res.losses


def init_model(ilm: FrozenLM, cfg: RunConfig) -> ToyFTModel:
    return ToyFTModel(ilm, cfg.feature_dim, window=cfg.enc_window, hidden_dim=cfg.enc_hidden_dim,
                      blank_embed_dim=cfg.blank_embed_dim, rng=stream(cfg.seed, "init"), init_scale=cfg.init_scale)


def _check_finite(loss, grads, what):
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise TrainingDivergedError(f"{what}: loss={loss!r}, non-finite gradients in {bad}")


class Momentum:
    """SGD with heavy-ball momentum and global-norm clipping."""

    def __init__(self, params: dict, lr: float, momentum: float, clip: Optional[float] = None):
        self.lr, self.momentum, self.clip = lr, momentum, clip
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> float:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        scale = self.clip / norm if self.clip and norm > self.clip else 1.0
        for k in params:
            self.velocity[k] = self.momentum * self.velocity[k] - self.lr * scale * grads[k]
            params[k] = params[k] + self.velocity[k]
        return norm


def gold_band(utt, tokens, cfg: RunConfig):
    return band_from_alignment(utt.alignment, cfg.band, utt.num_frames, len(tokens))


def utterance_loss_grads(model: ToyFTModel, utt, vocab, cfg: RunConfig, banded: bool = False):
    tokens = vocab.encode(utt.words)
    fwd = model.forward(utt.features)
    mask = gold_band(utt, tokens, cfg) if banded else None
    loss, grads = model.sequence_loss_grads(fwd, tokens, mask=mask)
    if grads is None:
        raise TrainingDivergedError(f"{utt.utt_id}: no path through the lattice")
    return loss, grads


def batch_loss_grads(model, utts, vocab, cfg: RunConfig, banded: bool = False):
    total = model.zero_grads()
    loss = 0.0
    # Fixed summation order keeps the reduction reproducible.
    for u in utts:
        l, g = utterance_loss_grads(model, u, vocab, cfg, banded)
        loss += l
        for k in total:
            total[k] += g[k]
    n = len(utts)
    return loss / n, {k: v / n for k, v in total.items()}


def batches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    model: ToyFTModel
    losses: list = field(default_factory=list)


def train_ft(model: ToyFTModel, corpus: ToyCorpus, cfg: RunConfig, epochs: Optional[int] = None) -> TrainResult:
    """Minimise the transducer loss on the paired training split.

    The ILM is frozen and receives no updates.  Returns a trained copy and the
    per-batch loss curve.
    """
    model = model.copy()
    utts = corpus.split("train")
    epochs = cfg.ft_epochs if epochs is None else epochs
    rng = stream(cfg.seed, "batch")
    opt = Momentum(model.params, cfg.ft_lr, cfg.ft_momentum, cfg.grad_clip)
    losses = []
    for epoch in range(epochs):
        epoch_losses = []
        for step, idx in enumerate(batches(len(utts), cfg.batch_size, rng)):
            loss, grads = batch_loss_grads(model, [utts[i] for i in idx], corpus.vocab, cfg, cfg.train_band)
            _check_finite(loss, grads, f"epoch {epoch} batch {step}")
            opt.step(model.params, grads)
            epoch_losses.append(loss)
        losses.extend(epoch_losses)
        log.info("epoch %d: mean loss %.4f", epoch, np.mean(epoch_losses))
    return TrainResult(model, losses)


def nbest_items(model: ToyFTModel, fwd, utt, vocab, cfg: RunConfig, weights: FusionWeights):
    """Beam N-best for one utterance, each with its banded full-sum log-probability
    under the decode alpha and the gradients of that quantity."""
    provider = model.provider(utt.features)
    dcfg = cfg.decode_config(weights, length_norm=False, forbidden=(vocab.eos_id,))
    lattice_weights = FusionWeights(weights.alpha, 0.0)
    items, grads = [], []
    for h in beam_search(provider, model.ilm, dcfg):
        mask = band_from_alignment(h.viterbi_alignment, cfg.band, utt.num_frames, len(h.tokens))
        loss, g = model.sequence_loss_grads(fwd, h.tokens, mask=mask, weights=lattice_weights)
        if g is None:
            continue
        errors = word_edit_distance(vocab.decode(h.tokens), utt.words)
        items.append(NBestItem(h.tokens, -loss, h.ilm_logprob_sum, errors))
        grads.append(g)
    return items, grads


def mwer_utterance(model: ToyFTModel, utt, vocab, cfg: RunConfig, weights: FusionWeights):
    """Combined MWER + lambda * banded transducer loss for one utterance.

    Returns ``(None, None, None)`` when the N-best list is empty.
    """
    fwd = model.forward(utt.features)
    items, hyp_grads = nbest_items(model, fwd, utt, vocab, cfg, weights)
    if not items:
        return None, None, None
    m = mwer_loss(items, weights.beta)
    dscore = mwer_gradients(items, weights.beta)
    total = model.zero_grads()
    # d loss / d theta = sum_i dL/dscore_i * d logP_i / d theta, and logP_i = -loss_i.
    for d, g in zip(dscore, hyp_grads):
        for k in total:
            total[k] -= d * g[k]
    tokens = vocab.encode(utt.words)
    rnnt, g = model.sequence_loss_grads(fwd, tokens, mask=gold_band(utt, tokens, cfg), weights=TRAINING_WEIGHTS)
    if g is None:
        raise TrainingDivergedError(f"{utt.utt_id}: reference has no path through its band")
    for k in total:
        total[k] += cfg.lambda_rnnt * g[k]
    return m, rnnt, total


@dataclass
class MwerResult:
    model: ToyFTModel
    batch_losses: list
    batch_mwer: list
    skipped: int
    before: dict
    after: dict


def mwer_finetune(model: ToyFTModel, corpus: ToyCorpus, cfg: RunConfig, weights: Optional[FusionWeights] = None,
                  epochs: Optional[int] = None, eval_split: str = "dev") -> MwerResult:
    """ILM-fusion-aware MWER finetuning at the decode weights ``weights``.

    The N-best list is regenerated for every batch.  Utterances with an empty
    N-best are skipped and counted.
    """
    weights = cfg.weights if weights is None else weights
    epochs = cfg.mwer_epochs if epochs is None else epochs
    vocab = corpus.vocab
    dcfg = cfg.decode_config(weights)
    dev = corpus.split(eval_split)
    before = evaluate(model, dev, vocab, dcfg).summary()

    model = model.copy()
    utts = corpus.split(cfg.mwer_split)
    rng = stream(cfg.seed, "batch")
    opt = Momentum(model.params, cfg.mwer_lr, cfg.ft_momentum, cfg.grad_clip)
    losses, mwers, skipped = [], [], 0
    for epoch in range(epochs):
        for step, idx in enumerate(batches(len(utts), cfg.mwer_batch_size, rng)):
            total, n, batch_loss, batch_mwer = model.zero_grads(), 0, 0.0, 0.0
            for i in idx:
                m, rnnt, g = mwer_utterance(model, utts[i], vocab, cfg, weights)
                if g is None:
                    skipped += 1
                    continue
                n += 1
                batch_mwer += m
                batch_loss += m + cfg.lambda_rnnt * rnnt
                for k in total:
                    total[k] += g[k]
            if n == 0:
                log.warning("epoch %d batch %d: empty N-best for every utterance, skipped", epoch, step)
                continue
            grads = {k: v / n for k, v in total.items()}
            _check_finite(batch_loss, grads, f"mwer epoch {epoch} batch {step}")
            opt.step(model.params, grads)
            losses.append(batch_loss / n)
            mwers.append(batch_mwer / n)
    if skipped:
        log.warning("%d utterances skipped for empty N-best", skipped)
    after = evaluate(model, dev, vocab, dcfg).summary()
    return MwerResult(model, losses, mwers, skipped, before, after)


def check_batch_bounds(model, corpus, cfg, weights, utts=None):
    """Per-utterance MWER losses with their ``(min R, max R)`` bounds."""
    out = []
    for u in corpus.split(cfg.mwer_split) if utts is None else utts:
        fwd = model.forward(u.features)
        items, _ = nbest_items(model, fwd, u, corpus.vocab, cfg, weights)
        if items:
            r = [it.word_errors for it in items]
            out.append((mwer_loss(items, weights.beta), min(r), max(r)))
    return out
