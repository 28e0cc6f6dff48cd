"""Explicit internal language model: scoring interface, a small feed-forward LM,
the ILM loss, text-only pretraining, and freezing.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import InvalidInputError, TrainingDivergedError, UnsupportedOperationError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ftilm.toy_neural_lm"
CHECKPOINT_VERSION = 1


class LMInterface(ABC):
    """Label-history language model over a vocabulary of ``vocab_size`` tokens.

    States are opaque hashable values.  ``advance`` never mutates its input.
    """

    vocab_size: int

    @property
    @abstractmethod
    def start_state(self) -> Hashable: ...

    @abstractmethod
    def advance(self, state: Hashable, token: int) -> Hashable: ...

    @abstractmethod
    def logprobs(self, state: Hashable) -> np.ndarray: ...

    def sequence_logprob(self, tokens: Sequence[int]) -> float:
        state = self.start_state
        total = 0.0
        for tok in tokens:
            total += float(self.logprobs(state)[tok])
            state = self.advance(state, tok)
        return total


class UniformLM(LMInterface):
    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    @property
    def start_state(self):
        return ()

    def advance(self, state, token):
        return ()

    def logprobs(self, state):
        return np.full(self.vocab_size, -np.log(self.vocab_size))


class ToyNeuralLM(LMInterface):
    """Fixed-order feed-forward LM: embeddings of the last ``order`` tokens,
    one tanh hidden layer, and a softmax output.

    The start state is ``order`` copies of ``bos_id``.
    """

    param_names = ("embedding", "w_hidden", "b_hidden", "w_out", "b_out")

    def __init__(self, vocab_size, order=3, embed_dim=16, hidden_dim=32, bos_id=0, rng=None, init_scale=0.1):
        if vocab_size < 1 or order < 1:
            raise InvalidInputError("vocab_size and order must be positive")
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self.embed_dim = int(embed_dim)
        self.hidden_dim = int(hidden_dim)
        self.bos_id = int(bos_id)
        rng = np.random.default_rng(0) if rng is None else rng
        V, N, E, H = self.vocab_size, self.order, self.embed_dim, self.hidden_dim
        self.params = {
            "embedding": init_scale * rng.standard_normal((V, E)),
            "w_hidden": init_scale * rng.standard_normal((N * E, H)),
            "b_hidden": np.zeros(H),
            "w_out": init_scale * rng.standard_normal((H, V)),
            "b_out": np.zeros(V),
        }

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def start_state(self) -> tuple:
        return (self.bos_id,) * self.order

    def advance(self, state, token):
        return tuple(state[1:]) + (int(token),)

    def _hidden(self, contexts: np.ndarray):
        x = self.params["embedding"][contexts].reshape(len(contexts), -1)
        h = np.tanh(x @ self.params["w_hidden"] + self.params["b_hidden"])
        return x, h

    def batch_logprobs(self, contexts) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.int64).reshape(-1, self.order)
        _, h = self._hidden(contexts)
        return log_softmax(h @ self.params["w_out"] + self.params["b_out"], axis=-1)

    def logprobs(self, state) -> np.ndarray:
        return self.batch_logprobs(np.asarray(state)[None])[0]

    def examples(self, corpus: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Flatten a corpus into ``(contexts, targets)`` arrays."""
        contexts, targets = [], []
        for sent in corpus:
            state = self.start_state
            for tok in sent:
                contexts.append(state)
                targets.append(tok)
                state = self.advance(state, tok)
        return (
            np.asarray(contexts, dtype=np.int64).reshape(-1, self.order),
            np.asarray(targets, dtype=np.int64),
        )

    def loss_and_grads(self, contexts: np.ndarray, targets: np.ndarray):
        """Mean token NLL and its gradient for every parameter."""
        p = self.params
        n = len(targets)
        x, h = self._hidden(contexts)
        logits = h @ p["w_out"] + p["b_out"]
        logp = log_softmax(logits, axis=-1)
        loss = -logp[np.arange(n), targets].mean()

        g_logits = softmax(logits, axis=-1)
        g_logits[np.arange(n), targets] -= 1.0
        g_logits /= n
        g_h = g_logits @ p["w_out"].T
        g_pre = g_h * (1.0 - h * h)
        g_x = (g_pre @ p["w_hidden"].T).reshape(n, self.order, self.embed_dim)
        g_emb = np.zeros_like(p["embedding"])
        np.add.at(g_emb, contexts, g_x)
        grads = {
            "embedding": g_emb,
            "w_hidden": x.T @ g_pre,
            "b_hidden": g_pre.sum(axis=0),
            "w_out": h.T @ g_logits,
            "b_out": g_logits.sum(axis=0),
        }
        return float(loss), grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for k in self.param_names:
            size = self.params[k].size
            self.params[k] = np.array(flat[offset:offset + size]).reshape(self.params[k].shape)
            offset += size

    def copy(self) -> "ToyNeuralLM":
        return copy.deepcopy(self)

    def param_hash(self) -> str:
        return _hash_params(self.params, self.param_names)

    def save(self, path) -> None:
        np.savez(
            path,
            format=np.array(CHECKPOINT_FORMAT),
            version=np.array(CHECKPOINT_VERSION),
            dims=np.array([self.vocab_size, self.order, self.embed_dim, self.hidden_dim, self.bos_id]),
            **{k: self.params[k] for k in self.param_names},
        )

    @classmethod
    def load(cls, path) -> "ToyNeuralLM":
        with np.load(path) as z:
            if str(z["format"]) != CHECKPOINT_FORMAT:
                raise InvalidInputError(f"{path} is not a toy LM checkpoint")
            if int(z["version"]) != CHECKPOINT_VERSION:
                raise InvalidInputError(f"unsupported LM checkpoint version {int(z['version'])}")
            V, N, E, H, bos = (int(v) for v in z["dims"])
            lm = cls(V, order=N, embed_dim=E, hidden_dim=H, bos_id=bos)
            lm.params = {k: np.array(z[k]) for k in cls.param_names}
        return lm


def _hash_params(params: dict, names) -> str:
    h = hashlib.sha256()
    for k in names:
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def _check_corpus(corpus):
    if len(corpus) == 0 or sum(len(s) for s in corpus) == 0:
        raise InvalidInputError("corpus is empty")


def ilm_loss(lm: LMInterface, corpus: Sequence[Sequence[int]]) -> float:
    """Mean negative log-likelihood per token over ``corpus``."""
    _check_corpus(corpus)
    if isinstance(lm, ToyNeuralLM):
        contexts, targets = lm.examples(corpus)
        return -float(lm.batch_logprobs(contexts)[np.arange(len(targets)), targets].mean())
    total = sum(lm.sequence_logprob(sent) for sent in corpus)
    return -total / sum(len(s) for s in corpus)


def perplexity(lm: LMInterface, corpus) -> float:
    return float(np.exp(ilm_loss(lm, corpus)))


@dataclass
class PretrainResult:
    lm: ToyNeuralLM
    losses: list = field(default_factory=list)


def pretrain(
    lm: ToyNeuralLM,
    corpus: Sequence[Sequence[int]],
    steps: int,
    learning_rate: float,
    momentum: float = 0.0,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> PretrainResult:
    """Text-only SGD on the ILM loss.  ``lm`` is left untouched; a trained copy is returned.

    ``losses[i]`` is the (mini-)batch loss before update ``i``.
    """
    if steps < 0:
        raise InvalidInputError("steps must be non-negative")
    _check_corpus(corpus)
    lm = lm.copy()
    contexts, targets = lm.examples(corpus)
    n = len(targets)
    velocity = {k: np.zeros_like(v) for k, v in lm.params.items()}
    rng = np.random.default_rng(0) if rng is None else rng
    losses = []
    for step in range(steps):
        if batch_size is None or batch_size >= n:
            idx = slice(None)
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
        loss, grads = lm.loss_and_grads(contexts[idx], targets[idx])
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise TrainingDivergedError(
                f"ILM loss {loss} with non-finite state at step {step} (lr={learning_rate})"
            )
        losses.append(loss)
        for k, g in grads.items():
            velocity[k] = momentum * velocity[k] - learning_rate * g
            lm.params[k] = lm.params[k] + velocity[k]
    if steps:
        logger.info("ILM pretraining: loss %.4f -> %.4f over %d steps", losses[0], losses[-1], steps)
    return PretrainResult(lm=lm, losses=losses)


class FrozenLM(LMInterface):
    """Read-only scoring handle around a trained LM.

    Parameters are copied and write-protected; log-probabilities are cached
    per state.
    """

    def __init__(self, lm: ToyNeuralLM):
        self._lm = lm.copy()
        for v in self._lm.params.values():
            v.setflags(write=False)
        self.vocab_size = self._lm.vocab_size
        self._cache: dict = {}

    @property
    def start_state(self):
        return self._lm.start_state

    @property
    def order(self) -> int:
        return self._lm.order

    @property
    def params(self) -> dict:
        return self._lm.params

    @property
    def model(self) -> ToyNeuralLM:
        """A trainable copy of the wrapped model."""
        lm = self._lm.copy()
        lm.params = {k: np.array(v) for k, v in lm.params.items()}
        return lm

    def advance(self, state, token):
        return self._lm.advance(state, token)

    def logprobs(self, state):
        state = tuple(state)
        out = self._cache.get(state)
        if out is None:
            out = self._lm.logprobs(state)
            out.setflags(write=False)
            self._cache[state] = out
        return out

    def batch_logprobs(self, contexts):
        return self._lm.batch_logprobs(contexts)

    def history_logprobs(self, tokens: Sequence[int]) -> np.ndarray:
        """``(len(tokens) + 1, V)`` log-probabilities after each prefix of ``tokens``."""
        state = self.start_state
        rows = [self.logprobs(state)]
        for tok in tokens:
            state = self.advance(state, tok)
            rows.append(self.logprobs(state))
        return np.stack(rows)

    def param_hash(self) -> str:
        return self._lm.param_hash()

    def save(self, path) -> None:
        self._lm.save(path)

    def unfreeze(self):
        raise UnsupportedOperationError("a frozen LM cannot be unfrozen; train a copy via .model instead")


def freeze(lm: ToyNeuralLM) -> FrozenLM:
    return FrozenLM(lm)
