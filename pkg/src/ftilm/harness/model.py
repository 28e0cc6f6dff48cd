"""Small factorized transducer with hand-written gradients.

* encoder: tanh layer over a window of ``2 * window + 1`` stacked frames
* acoustic branch: linear projection of the encoder output to the vocabulary
* blank branch: stateless predictor (embedding of the last label, then a
  linear layer), added to the encoder output, tanh, linear to one logit
* non-blank predictor: a frozen ILM supplying ``log P_ilm`` per label history
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..decode import ArrayScoreProvider
from ..errors import InvalidInputError
from ..factorization import TRAINING_WEIGHTS, FTScores, FusionWeights, build_lattice, lattice_grad_to_logits
from ..ilm import FrozenLM, ToyNeuralLM
from ..lattice import BandMask, loss_gradients, restricted_loss_gradients

CHECKPOINT_FORMAT = "ftilm.toy_ft_model"
CHECKPOINT_VERSION = 1


def stack_window(features: np.ndarray, window: int) -> np.ndarray:
    """``(T, (2w+1) F)`` matrix of each frame with its zero-padded neighbours."""
    T, F = features.shape
    padded = np.vstack([np.zeros((window, F)), features, np.zeros((window, F))])
    return np.hstack([padded[k:k + T] for k in range(2 * window + 1)])


@dataclass
class Forward:
    """Cached activations for one utterance."""

    x: np.ndarray
    h_enc: np.ndarray
    am_logits: np.ndarray


class ToyFTModel:
    param_names = ("w_enc", "b_enc", "w_am", "b_am", "blank_embed", "w_pred", "b_pred", "w_blank", "b_blank")

    def __init__(self, ilm: FrozenLM, feature_dim: int, window: int = 1, hidden_dim: int = 32,
                 blank_embed_dim: int = 8, rng=None, init_scale: float = 0.1):
        if not isinstance(ilm, FrozenLM):
            raise InvalidInputError("the non-blank predictor must be a frozen LM")
        rng = np.random.default_rng(0) if rng is None else rng
        self.ilm = ilm
        self.feature_dim = int(feature_dim)
        self.window = int(window)
        self.hidden_dim = int(hidden_dim)
        self.blank_embed_dim = int(blank_embed_dim)
        V, D, E = ilm.vocab_size, self.hidden_dim, self.blank_embed_dim
        W = (2 * self.window + 1) * self.feature_dim
        self.params = {
            "w_enc": init_scale * rng.standard_normal((W, D)),
            "b_enc": np.zeros(D),
            "w_am": init_scale * rng.standard_normal((D, V)),
            "b_am": np.zeros(V),
            "blank_embed": init_scale * rng.standard_normal((V, E)),
            "w_pred": init_scale * rng.standard_normal((E, D)),
            "b_pred": np.zeros(D),
            "w_blank": init_scale * rng.standard_normal(D),
            "b_blank": np.zeros(()),
        }

    @property
    def vocab_size(self) -> int:
        return self.ilm.vocab_size

    @property
    def start_token(self) -> int:
        return self.ilm.start_state[-1]

    def forward(self, features: np.ndarray) -> Forward:
        p = self.params
        x = stack_window(np.asarray(features, dtype=np.float64), self.window)
        h = np.tanh(x @ p["w_enc"] + p["b_enc"])
        return Forward(x, h, h @ p["w_am"] + p["b_am"])

    def blank_predictor(self, tokens) -> np.ndarray:
        p = self.params
        return p["blank_embed"][np.asarray(tokens, dtype=np.int64)] @ p["w_pred"] + p["b_pred"]

    def blank_logits(self, fwd: Forward, last_tokens) -> np.ndarray:
        """``(T, len(last_tokens))`` blank logits for the given last-label contexts."""
        z = np.tanh(fwd.h_enc[:, None, :] + self.blank_predictor(last_tokens)[None])
        return z @ self.params["w_blank"] + self.params["b_blank"]

    def ft_scores(self, fwd: Forward, tokens: Sequence[int]) -> FTScores:
        last = [self.start_token] + list(tokens)
        return FTScores(fwd.am_logits, self.ilm.history_logprobs(tokens), self.blank_logits(fwd, last))

    def provider(self, features: np.ndarray) -> ArrayScoreProvider:
        fwd = self.forward(features)
        table = self.blank_logits(fwd, np.arange(self.vocab_size))
        return ArrayScoreProvider(fwd.am_logits, table, start_token=self.start_token)

    def backward(self, fwd: Forward, tokens: Sequence[int], g_am: np.ndarray, g_blank: np.ndarray) -> dict:
        """Parameter gradients given gradients on the acoustic logits and on the
        ``(T, U + 1)`` blank logits along ``tokens``."""
        p = self.params
        last = np.array([self.start_token] + list(tokens), dtype=np.int64)
        emb = p["blank_embed"][last]
        pred = emb @ p["w_pred"] + p["b_pred"]
        z = np.tanh(fwd.h_enc[:, None, :] + pred[None])

        g_z = g_blank[..., None] * p["w_blank"]
        g_pre = g_z * (1.0 - z * z)
        g_pred = g_pre.sum(axis=0)
        g_emb = np.zeros_like(p["blank_embed"])
        np.add.at(g_emb, last, g_pred @ p["w_pred"].T)

        g_h = g_pre.sum(axis=1) + g_am @ p["w_am"].T
        g_h_pre = g_h * (1.0 - fwd.h_enc ** 2)
        return {
            "w_enc": fwd.x.T @ g_h_pre,
            "b_enc": g_h_pre.sum(axis=0),
            "w_am": fwd.h_enc.T @ g_am,
            "b_am": g_am.sum(axis=0),
            "blank_embed": g_emb,
            "w_pred": emb.T @ g_pred,
            "b_pred": g_pred.sum(axis=0),
            "w_blank": np.einsum("tu,tud->d", g_blank, z),
            "b_blank": np.asarray(g_blank.sum()),
        }

    def sequence_loss_grads(self, fwd: Forward, tokens: Sequence[int], mask: Optional[BandMask] = None,
                            weights: FusionWeights = TRAINING_WEIGHTS, scale: float = 1.0):
        """``-log P(tokens | x)`` (optionally band-restricted) and ``scale`` times its parameter gradients."""
        scores = self.ft_scores(fwd, tokens)
        lattice = build_lattice(scores, tokens, weights)
        lg = loss_gradients(lattice) if mask is None else restricted_loss_gradients(lattice, mask)
        if lg.no_path:
            return lg.loss, None
        g = lattice_grad_to_logits(scores, tokens, scale * lg.blank, scale * lg.label, weights)
        return lg.loss, self.backward(fwd, tokens, g.am_logits, g.blank_logits)

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.params[k]) for k in self.param_names])

    def set_flat(self, flat) -> None:
        offset = 0
        for k in self.param_names:
            shape = np.shape(self.params[k])
            size = int(np.prod(shape))
            self.params[k] = np.array(flat[offset:offset + size]).reshape(shape)
            offset += size

    def copy(self) -> "ToyFTModel":
        new = copy.copy(self)
        new.params = {k: v.copy() for k, v in self.params.items()}
        return new

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k in self.param_names:
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        """Write model parameters together with the frozen ILM they were trained against."""
        ilm = self.ilm.model
        np.savez(
            path,
            format=np.array(CHECKPOINT_FORMAT),
            version=np.array(CHECKPOINT_VERSION),
            dims=np.array([self.feature_dim, self.window, self.hidden_dim, self.blank_embed_dim]),
            ilm_dims=np.array([ilm.vocab_size, ilm.order, ilm.embed_dim, ilm.hidden_dim, ilm.bos_id]),
            **{k: self.params[k] for k in self.param_names},
            **{"ilm." + k: ilm.params[k] for k in ilm.param_names},
        )

    @classmethod
    def load(cls, path) -> "ToyFTModel":
        with np.load(path) as z:
            if str(z["format"]) != CHECKPOINT_FORMAT:
                raise InvalidInputError(f"{path} is not a toy FT checkpoint")
            if int(z["version"]) != CHECKPOINT_VERSION:
                raise InvalidInputError(f"unsupported FT checkpoint version {int(z['version'])}")
            V, N, E, H, bos = (int(v) for v in z["ilm_dims"])
            lm = ToyNeuralLM(V, order=N, embed_dim=E, hidden_dim=H, bos_id=bos)
            lm.params = {k: np.array(z["ilm." + k]) for k in lm.param_names}
            F, W, D, B = (int(v) for v in z["dims"])
            model = cls(FrozenLM(lm), F, window=W, hidden_dim=D, blank_embed_dim=B)
            model.params = {k: np.array(z[k]) for k in cls.param_names}
        return model
