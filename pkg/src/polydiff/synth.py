"""Synthetic bill corpus with planted near-duplicates.

Documents are drawn from per-topic vocabularies mixed with shared background
words and stopwords. A ``dup_rate`` fraction of documents are mutated copies
(word deletions, substitutions and adjacent swaps) of an earlier document from
a different state; those (source, copy) pairs are the ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .recordstore import make_key
from .textfeat import load_stopwords

STATES = (
    "AL AK AZ AR CA CO CT DE FL GA HI ID IL IN IA KS KY LA ME MD MA MI MN MS MO "
    "MT NE NV NH NJ NM NY NC ND OH OK OR PA RI SC SD TN TX UT VT VA WA WV WI WY"
).split()

_ONSETS = "b c d f g h j k l m n p r s t v w z br cr dr fr gr pr tr st sl pl".split()
_VOWELS = "a e i o u ai ea io ou".split()
_CODAS = ["", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ck"]


@dataclass
class SynthParams:
    n_docs: int = 1000
    n_states: int = 5
    n_topics: int = 10
    dup_rate: float = 0.05
    seed: int = 13
    topic_vocab: int = 300
    background_vocab: int = 2000
    min_len: int = 120
    max_len: int = 240
    mutation: float = 0.08


@dataclass
class SynthCorpus:
    manifest: Path
    ground_truth: list[tuple[str, str]]
    topics: dict[str, int]
    keys: list[str]


def _pseudo_words(rng: np.random.Generator, count: int, taken: set) -> list[str]:
    words = []
    while len(words) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll)
        ) + _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def _mutate(words: list[str], rng, rate: float, replacements: list[str]) -> list[str]:
    out = []
    for w in words:
        u = rng.random()
        if u < rate / 2:
            continue
        if u < rate:
            out.append(replacements[rng.integers(len(replacements))])
        else:
            out.append(w)
    for _ in range(int(len(out) * rate / 2) if len(out) > 1 else 0):
        i = int(rng.integers(len(out) - 1))
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def generate(params: SynthParams) -> tuple[list[dict], list[tuple[str, str]]]:
    """Documents as dicts (key, state, year, docversion, topic, text) plus ground truth."""
    p = params
    if p.n_docs < 1 or p.n_states < 1 or p.n_topics < 1:
        raise ValueError("n_docs, n_states and n_topics must be positive")
    if not 0.0 <= p.dup_rate <= 1.0:
        raise ValueError(f"dup_rate must lie in [0, 1], got {p.dup_rate}")
    if p.n_states > len(STATES):
        raise ValueError(f"at most {len(STATES)} states")
    rng = np.random.default_rng(p.seed)
    states = STATES[: p.n_states]
    taken: set = set(load_stopwords())
    background = _pseudo_words(rng, p.background_vocab, taken)
    topic_words = [_pseudo_words(rng, p.topic_vocab, taken) for _ in range(p.n_topics)]
    stop = sorted(w for w in load_stopwords() if w.isalpha())
    bg_w, tp_w = _zipf_weights(len(background)), _zipf_weights(p.topic_vocab)

    docs: list[dict] = []
    truth: list[tuple[str, str]] = []
    serial: dict[tuple[str, int], int] = {}
    originals_by_state: dict[str, list[int]] = {s: [] for s in states}
    for i in range(p.n_docs):
        state = states[int(rng.integers(len(states)))]
        year = int(rng.integers(2000, 2017))
        n = serial.get((state, year), 0) + 1
        serial[(state, year)] = n
        docversion = f"{'SB' if rng.random() < 0.5 else 'HB'}{n}"
        pk = make_key(state, year, docversion)

        source = None
        if rng.random() < p.dup_rate:
            pool = [j for s in states if s != state for j in originals_by_state[s]]
            if pool:
                source = docs[pool[int(rng.integers(len(pool)))]]
        if source is not None:
            topic = source["topic"]
            words = _mutate(source["words"], rng, p.mutation, topic_words[topic])
            truth.append(tuple(sorted((source["key"], pk))))
        else:
            topic = int(rng.integers(p.n_topics))
            length = int(rng.integers(p.min_len, p.max_len + 1))
            kind = rng.random(length)
            tw = rng.choice(p.topic_vocab, size=length, p=tp_w)
            bw = rng.choice(len(background), size=length, p=bg_w)
            sw = rng.integers(len(stop), size=length)
            words = [
                topic_words[topic][tw[j]] if kind[j] < 0.55
                else background[bw[j]] if kind[j] < 0.85
                else stop[sw[j]]
                for j in range(length)
            ]
            originals_by_state[state].append(i)
        docs.append({"key": pk, "state": state, "year": year, "docversion": docversion,
                     "topic": topic, "words": words})
    for d in docs:
        d["text"] = _layout(d["words"])
    return docs, sorted(truth)


def _layout(words: list[str]) -> str:
    lines, line = [], []
    for i, w in enumerate(words):
        line.append(w)
        if len(line) == 12 or i == len(words) - 1:
            lines.append(" ".join(line) + ".")
            line = []
    return "\n".join(lines) + "\n"


def synth_corpus(out_dir, params: SynthParams | None = None, **kwargs) -> SynthCorpus:
    """Write documents, ``manifest.csv``, ``ground_truth.csv`` and ``topics.csv``."""
    params = params or SynthParams(**kwargs)
    docs, truth = generate(params)
    out = Path(out_dir)
    (out / "docs").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "state", "year", "docversion"])
        for d in docs:
            rel = f"docs/{d['state']}_{d['year']}_{d['docversion']}.txt"
            (out / rel).write_text(d["text"], encoding="utf-8")
            w.writerow([rel, d["state"], d["year"], d["docversion"]])
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pk1", "pk2"])
        w.writerows(truth)
    with open(out / "topics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pk", "topic"])
        w.writerows((d["key"], d["topic"]) for d in docs)
    return SynthCorpus(manifest, truth, {d["key"]: d["topic"] for d in docs}, [d["key"] for d in docs])


def read_ground_truth(path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["pk1"], r["pk2"]) for r in csv.DictReader(fh)]
