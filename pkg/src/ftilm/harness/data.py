"""Synthetic paired/text corpora with a rare-word tail.

Words are emitted by a first-order Markov source.  Every rare word has an
acoustically close common "twin" and a trigger word after which it may
follow.  Text (used to pretrain the ILM) and dev utterances come from a
source where rare words are likely after their trigger; paired training
utterances come from a shifted source where they are scarce.  An optional
small "adapt" split of paired utterances follows the text source.  The acoustic
model therefore sees few rare-word examples while the ILM knows where they
occur.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from .config import RunConfig, stream

EOS = "</s>"


@dataclass(frozen=True)
class Vocab:
    """Label inventory.  Label ids index the non-blank distribution; id 0 is
    the sentence boundary (also the start context).  ``blank_id`` lies outside
    the label range and is never scored by the non-blank branch.
    """

    tokens: tuple
    rare: frozenset = frozenset()

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict:
        return {w: i for i, w in enumerate(self.tokens)}

    def encode(self, words: Sequence[str]) -> list[int]:
        idx = self.index
        try:
            return [idx[w] for w in words]
        except KeyError as exc:
            raise InvalidInputError(f"word {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "rare": sorted(self.rare), "blank_id": self.blank_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["tokens"]), frozenset(d["rare"]))


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    words: list
    alignment: list
    spans: list = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return len(self.features)

    def to_record(self, split: str) -> dict:
        return {
            "utt_id": self.utt_id,
            "split": split,
            "features": self.features.tolist(),
            "words": list(self.words),
            "alignment": list(self.alignment),
            "spans": [list(s) for s in self.spans],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Utterance":
        return cls(
            rec["utt_id"],
            np.array(rec["features"], dtype=np.float64).reshape(len(rec["features"]), -1),
            list(rec["words"]),
            list(rec["alignment"]),
            [tuple(s) for s in rec.get("spans", [])],
        )


@dataclass
class ToyCorpus:
    vocab: Vocab
    splits: dict = field(default_factory=dict)
    text: list = field(default_factory=list)
    prototypes: np.ndarray | None = None

    @property
    def utterances(self) -> list:
        return [u for split in self.splits.values() for u in split]

    def split(self, name: str) -> list:
        if name not in self.splits:
            raise InvalidInputError(f"corpus has no split {name!r}")
        return self.splits[name]

    def text_ids(self) -> list[list[int]]:
        """Text corpus as label ids, each sentence terminated by the boundary token."""
        return [self.vocab.encode(s) + [self.vocab.eos_id] for s in self.text]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "corpus.jsonl", "w") as fh:
            for name, utts in self.splits.items():
                for u in utts:
                    fh.write(json.dumps(u.to_record(name)) + "\n")
        (d / "text.txt").write_text("".join(" ".join(s) + "\n" for s in self.text))
        meta = self.vocab.to_dict()
        if self.prototypes is not None:
            meta["prototypes"] = self.prototypes.tolist()
        (d / "vocab.json").write_text(json.dumps(meta, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "ToyCorpus":
        d = Path(directory)
        meta = json.loads((d / "vocab.json").read_text())
        splits: dict = {}
        with open(d / "corpus.jsonl") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    splits.setdefault(rec["split"], []).append(Utterance.from_record(rec))
        text = [line.split() for line in (d / "text.txt").read_text().splitlines() if line.strip()]
        protos = np.array(meta["prototypes"]) if "prototypes" in meta else None
        return cls(Vocab.from_dict(meta), splits, text, protos)


@dataclass
class WordSource:
    """Markov word source: ``start`` over word ids, ``trans[i]`` over word ids
    with the last column the sentence end."""

    start: np.ndarray
    trans: np.ndarray

    def sample(self, rng, min_words, max_words) -> list[int]:
        n = len(self.start)
        while True:
            sent = [int(rng.choice(n, p=self.start))]
            while True:
                nxt = int(rng.choice(n + 1, p=self.trans[sent[-1]]))
                if nxt == n or len(sent) > max_words:
                    break
                sent.append(nxt)
            if min_words <= len(sent) <= max_words:
                return sent


def build_sources(cfg: RunConfig, rng) -> tuple[list[str], dict, WordSource, WordSource]:
    """Return word names, rare-word structure, and the (text, paired) sources."""
    K, R = cfg.n_common, cfg.n_rare
    if R < 0 or K < 2 * R + 2 or K < cfg.successors + 1:
        raise InvalidInputError(
            f"vocabulary too small: {K} common words cannot host {R} rare words with distinct twins and triggers"
        )
    words = [f"w{i:02d}" for i in range(K)] + [f"r{i:02d}" for i in range(R)]
    n = K + R
    base = np.zeros((n, n + 1))
    for i in range(K):
        succ = rng.choice([j for j in range(K) if j != i], size=cfg.successors, replace=False)
        base[i, succ] = rng.dirichlet(np.ones(cfg.successors)) * (1.0 - cfg.eos_prob)
        base[i, n] = cfg.eos_prob
    twins = {K + r: r for r in range(R)}
    triggers = {K + r: K - 1 - r for r in range(R)}
    for rare, twin in twins.items():
        trig = triggers[rare]
        # The twin must be a plausible continuation of the trigger.
        if base[trig, twin] == 0.0:
            base[trig, :K] *= 0.7
            base[trig, twin] = 0.3 * (1.0 - cfg.eos_prob)
        base[rare] = base[twin]
    start = np.zeros(n)
    start[:K] = 1.0 / K

    def with_rare(p):
        trans = base.copy()
        for rare, trig in triggers.items():
            trans[trig] *= 1.0 - p
            trans[trig, rare] = p
        return WordSource(start, trans / trans.sum(axis=1, keepdims=True))

    structure = {"twins": twins, "triggers": triggers}
    return words, structure, with_rare(cfg.rare_prob_text), with_rare(cfg.rare_prob_paired)


def render_utterance(utt_id, word_ids, words, prototypes, cfg: RunConfig, rng) -> Utterance:
    frames, alignment, spans = [], [], []
    for w in word_ids:
        dur = int(rng.integers(cfg.min_word_frames, cfg.max_word_frames + 1))
        alignment.append(len(frames) + dur // 2)
        spans.append((len(frames), len(frames) + dur))
        frames.extend(prototypes[w] + cfg.noise * rng.standard_normal((dur, cfg.feature_dim)))
    return Utterance(utt_id, np.array(frames), [words[w] for w in word_ids], alignment, spans)


def gen_data(cfg: RunConfig) -> ToyCorpus:
    rng = stream(cfg.seed, "data")
    words, structure, text_source, paired_source = build_sources(cfg, rng)
    K = cfg.n_common
    protos = rng.standard_normal((len(words), cfg.feature_dim))
    for rare, twin in structure["twins"].items():
        direction = rng.standard_normal(cfg.feature_dim)
        protos[rare] = protos[twin] + cfg.twin_distance * direction / np.linalg.norm(direction)

    def utts(prefix, source, n):
        return [
            render_utterance(f"{prefix}-{i:05d}", source.sample(rng, cfg.min_words, cfg.max_words),
                             words, protos, cfg, rng)
            for i in range(n)
        ]

    splits = {"train": utts("train", paired_source, cfg.n_train), "dev": utts("dev", text_source, cfg.n_dev)}
    text = [[words[w] for w in text_source.sample(rng, cfg.min_words, cfg.max_words)] for _ in range(cfg.n_text)]
    # Small in-domain paired set for sequence-level finetuning; drawn last so
    # the other splits do not depend on its size.
    if cfg.n_adapt:
        splits["adapt"] = utts("adapt", text_source, cfg.n_adapt)
    vocab = Vocab((EOS,) + tuple(words), frozenset(words[K:]))
    # Label id = word index + 1 (id 0 is the sentence boundary).
    label_protos = np.vstack([np.zeros(cfg.feature_dim), protos])
    corpus = ToyCorpus(vocab, splits, text, label_protos)
    freq = rare_frequency(corpus, "train")
    if freq >= cfg.rare_threshold:
        raise InvalidInputError(f"rare words make up {freq:.3f} of paired training words (threshold {cfg.rare_threshold})")
    return corpus


def rare_frequency(corpus: ToyCorpus, split: str) -> float:
    words = [w for u in corpus.split(split) for w in u.words]
    return sum(w in corpus.vocab.rare for w in words) / max(1, len(words))


def nearest_prototype_accuracy(corpus: ToyCorpus, split: str) -> float:
    """Fraction of frames whose nearest label prototype is the word they render."""
    protos = corpus.prototypes
    hits = total = 0
    for u in corpus.split(split):
        for (lo, hi), wid in zip(u.spans, corpus.vocab.encode(u.words)):
            d = ((u.features[lo:hi, None, :] - protos[None, 1:]) ** 2).sum(-1)
            hits += int((d.argmin(axis=1) + 1 == wid).sum())
            total += hi - lo
    return hits / max(1, total)
