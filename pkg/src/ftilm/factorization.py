"""Factorized transducer joiner: blank/non-blank score assembly.

The blank branch produces one logit per lattice cell which is squashed by a
sigmoid.  The non-blank branch adds per-frame acoustic log-probabilities and
per-history ILM log-probabilities, renormalizes over the vocabulary, and
scales by ``1 - P_blank``.  Decoding optionally reweights the ILM inside the
softmax (``alpha``) and adds it again outside (``beta``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_expit, log_softmax, softmax

from .errors import InvalidInputError
from .lattice import LogProbLattice


@dataclass(frozen=True)
class FusionWeights:
    """ILM weight inside the non-blank softmax (``alpha``) and added outside it (``beta``)."""

    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 2.0:
            raise InvalidInputError(f"alpha must lie in [0, 2], got {self.alpha}")
        if not self.beta >= 0.0:
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")

    @property
    def is_training(self) -> bool:
        return self.alpha == 1.0 and self.beta == 0.0


TRAINING_WEIGHTS = FusionWeights(1.0, 0.0)
# Best row of the published alpha/beta sweep.
DEFAULT_DECODE_WEIGHTS = FusionWeights(alpha=0.6, beta=0.6)


@dataclass(frozen=True)
class FTScores:
    """Factorized score tensors for one utterance and one label history.

    Attributes:
      am_logits: ``(T, V)`` acoustic projection, one row per frame.
      ilm_logits: ``(U + 1, V)`` non-blank predictor output, one row per history.
      blank_logits: ``(T, U + 1)`` blank joiner output per lattice cell.
    """

    am_logits: np.ndarray
    ilm_logits: np.ndarray
    blank_logits: np.ndarray

    def __post_init__(self):
        am = np.asarray(self.am_logits, dtype=np.float64)
        ilm = np.asarray(self.ilm_logits, dtype=np.float64)
        blank = np.asarray(self.blank_logits, dtype=np.float64)
        if am.ndim != 2 or ilm.ndim != 2 or blank.ndim != 2:
            raise InvalidInputError("FTScores arrays must be 2-D")
        if am.shape[1] != ilm.shape[1]:
            raise InvalidInputError("acoustic and ILM vocabularies differ")
        if blank.shape != (am.shape[0], ilm.shape[0]):
            raise InvalidInputError(
                f"blank_logits shape {blank.shape} != (T, U + 1) = {(am.shape[0], ilm.shape[0])}"
            )
        for name, arr in (("am", am), ("ilm", ilm), ("blank", blank)):
            if not np.isfinite(arr).all():
                raise InvalidInputError(f"{name} logits must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "am_logits", am)
        object.__setattr__(self, "ilm_logits", ilm)
        object.__setattr__(self, "blank_logits", blank)

    @property
    def T(self) -> int:
        return self.am_logits.shape[0]

    @property
    def U(self) -> int:
        return self.ilm_logits.shape[0] - 1

    @property
    def V(self) -> int:
        return self.am_logits.shape[1]


def blank_logprob(blank_logit):
    """Return ``(log P_b, log(1 - P_b))`` for a blank logit (works elementwise)."""
    return log_expit(blank_logit), log_expit(-np.asarray(blank_logit))


def nonblank_scores(am, ilm, blank_logit, weights: FusionWeights = TRAINING_WEIGHTS):
    """Non-blank scores for every token, broadcasting over leading axes.

    ``log(1 - P_b) + log_softmax(log P_am + alpha * log P_ilm) + beta * log P_ilm``.
    With training weights this is the normalized non-blank log-posterior.
    """
    am = np.asarray(am, dtype=np.float64)
    ilm = np.asarray(ilm, dtype=np.float64)
    if am.shape[-1] != ilm.shape[-1]:
        raise InvalidInputError(f"vocabulary mismatch: {am.shape[-1]} vs {ilm.shape[-1]}")
    log_am = log_softmax(am, axis=-1)
    log_ilm = log_softmax(ilm, axis=-1)
    # alpha == 1 and beta == 0 must reproduce the training scores bit for bit.
    mixed = log_am + log_ilm if weights.alpha == 1.0 else log_am + weights.alpha * log_ilm
    out = log_softmax(mixed, axis=-1) + log_expit(-np.asarray(blank_logit, dtype=np.float64))[..., None]
    if weights.beta != 0.0:
        out = out + weights.beta * log_ilm
    return out


def nonblank_train_logprobs(am, ilm, blank_logit) -> np.ndarray:
    """Normalized non-blank log-posterior; ``logsumexp`` of the result is ``log(1 - P_b)``."""
    am = np.asarray(am, dtype=np.float64)
    ilm = np.asarray(ilm, dtype=np.float64)
    if am.ndim != 1 or am.shape != ilm.shape:
        raise InvalidInputError(f"shape mismatch: am {am.shape}, ilm {ilm.shape}")
    return nonblank_scores(am, ilm, blank_logit, TRAINING_WEIGHTS)


def nonblank_decode_score(am, ilm, blank_logit, w: FusionWeights, k: int) -> float:
    """Fused decoding score of non-blank token ``k``."""
    am = np.asarray(am, dtype=np.float64)
    if not 0 <= k < am.shape[-1]:
        raise InvalidInputError(f"token {k} outside vocabulary of size {am.shape[-1]}")
    return float(nonblank_scores(am, ilm, blank_logit, w)[k])


def _check_target(scores: FTScores, target: Sequence[int]) -> np.ndarray:
    y = np.asarray(target, dtype=np.int64).reshape(-1)
    if len(y) != scores.U:
        raise InvalidInputError(f"target length {len(y)} != U = {scores.U}")
    if len(y) and (y.min() < 0 or y.max() >= scores.V):
        raise InvalidInputError("target contains an out-of-vocabulary id")
    return y


def build_lattice(
    scores: FTScores, target: Sequence[int], weights: FusionWeights = TRAINING_WEIGHTS
) -> LogProbLattice:
    """Slice the target token's score out of every cell.

    ``beta`` must be zero: the extra ILM term is not part of the alignment
    lattice, it is added per hypothesis instead.
    """
    if weights.beta != 0.0:
        raise InvalidInputError("lattices are built with beta = 0")
    y = _check_target(scores, target)
    T, U = scores.T, scores.U
    blank_lp, _ = blank_logprob(scores.blank_logits)
    full = nonblank_scores(
        scores.am_logits[:, None, :], scores.ilm_logits[None, :-1, :], scores.blank_logits[:, :-1], weights
    )
    label_lp = np.take_along_axis(full, np.broadcast_to(y[None, :, None], (T, U, 1)), axis=-1)[..., 0]
    return LogProbLattice(blank_lp, label_lp)


def build_training_lattice(scores: FTScores, target: Sequence[int]) -> LogProbLattice:
    return build_lattice(scores, target, TRAINING_WEIGHTS)


@dataclass(frozen=True)
class FTScoreGradients:
    am_logits: np.ndarray
    ilm_logits: np.ndarray
    blank_logits: np.ndarray


def lattice_grad_to_logits(
    scores: FTScores,
    target: Sequence[int],
    grad_blank: np.ndarray,
    grad_label: np.ndarray,
    weights: FusionWeights = TRAINING_WEIGHTS,
) -> FTScoreGradients:
    """Chain lattice-entry gradients back to the three logit tensors.

    ``weights`` must match the ones the lattice was built with (``beta`` is zero).
    """
    y = _check_target(scores, target)
    U, V = scores.U, scores.V
    am, ilm, b = scores.am_logits, scores.ilm_logits, scores.blank_logits

    # d log sigmoid(b) / db = sigmoid(-b); d log sigmoid(-b) / db = -sigmoid(b)
    p_blank = np.exp(log_expit(b))
    g_blank = grad_blank * (1.0 - p_blank)
    g_blank[:, :-1] -= grad_label * p_blank[:, :-1]

    log_ilm = log_softmax(ilm[:-1], axis=-1)
    mixed = log_softmax(am, axis=-1)[:, None, :] + weights.alpha * log_ilm[None, :, :]
    onehot = np.zeros((U, V))
    onehot[np.arange(U), y] = 1.0
    g_mixed = grad_label[..., None] * (onehot[None] - softmax(mixed, axis=-1))

    g_log_am = g_mixed.sum(axis=1)
    g_log_ilm = np.zeros((U + 1, V))
    g_log_ilm[:-1] = weights.alpha * g_mixed.sum(axis=0)

    g_am = g_log_am - softmax(am, axis=-1) * g_log_am.sum(axis=-1, keepdims=True)
    g_ilm = g_log_ilm - softmax(ilm, axis=-1) * g_log_ilm.sum(axis=-1, keepdims=True)
    return FTScoreGradients(am_logits=g_am, ilm_logits=g_ilm, blank_logits=g_blank)
