"""Documents, corpus files, batching and the synthetic cross-domain corpus.

Corpus file format (UTF-8, one document per line, TAB-separated)::

    <label: 1 | 0 | ->  <domain: S | T>  <sentence 1>  <sentence 2> ...

Tokens inside a sentence are separated by single spaces.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, UsageError

SOURCE, TARGET = "S", "T"
OOV = "<unk>"
ROLES = ("PIVOT_POS", "PIVOT_NEG", "SRC_POS", "SRC_NEG", "TGT_POS", "TGT_NEG", "FILLER")


@dataclass(frozen=True)
class Document:
    sentences: tuple  # tuple of tuples of token ids
    sentiment: Optional[int]  # 1 positive, 0 negative, None unlabeled
    domain: str
    tokens: tuple = ()  # raw tokens, same nesting as sentences

    def __post_init__(self):
        if not self.sentences or any(len(s) == 0 for s in self.sentences):
            raise DataError("document needs at least one non-empty sentence")
        if self.domain not in (SOURCE, TARGET):
            raise DataError(f"unknown domain {self.domain!r}")

    @property
    def is_source(self):
        return self.domain == SOURCE

    def unlabeled(self):
        return Document(self.sentences, None, self.domain, self.tokens)


class Vocabulary:
    """token -> id map; id 0 is reserved for out-of-vocabulary tokens."""

    def __init__(self, tokens):
        self.itos = [OOV] + [t for t in tokens if t != OOV]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, sentence):
        return tuple(self.stoi.get(t, 0) for t in sentence)

    @classmethod
    def build(cls, token_lists, limit):
        """Top-``limit`` most frequent tokens; ties broken alphabetically."""
        counts = Counter(t for toks in token_lists for t in toks)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ranked[:limit]])


@dataclass
class TrainingView:
    """What training may see: target documents carry no labels."""

    source_train: list
    source_unlabeled: list
    target_unlabeled: list

    def __post_init__(self):
        assert all(d.sentiment is None for d in self.target_unlabeled)

    @property
    def source_all(self):
        return self.source_train + self.source_unlabeled


@dataclass
class Corpus:
    source_train: list
    source_test: list
    source_unlabeled: list
    target_unlabeled: list
    target_test: list  # evaluation only
    vocab: Vocabulary
    records: list = field(default_factory=list, repr=False)  # (label, domain, sentences) in file order

    def training_view(self):
        return TrainingView(list(self.source_train), list(self.source_unlabeled),
                            [d.unlabeled() for d in self.target_unlabeled])

    def all_documents(self):
        return (self.source_train + self.source_test + self.source_unlabeled
                + self.target_unlabeled + self.target_test)

    def counts(self):
        return {
            "N_s^l": len(self.source_train) + len(self.source_test),
            "N_s": len(self.source_train) + len(self.source_test) + len(self.source_unlabeled),
            "N_t": len(self.target_unlabeled),
            "target_test": len(self.target_test),
        }


def parse_line(line, lineno):
    fields = line.rstrip("\n").split("\t")
    if len(fields) < 3:
        raise DataError(f"line {lineno}: expected label, domain and at least one sentence")
    label, domain, *sentences = fields
    if label not in ("1", "0", "-"):
        raise DataError(f"line {lineno}: bad label {label!r}")
    if domain not in (SOURCE, TARGET):
        raise DataError(f"line {lineno}: unknown domain tag {domain!r}")
    toks = []
    for s in sentences:
        words = s.split(" ")
        if s == "" or any(w == "" for w in words):
            raise DataError(f"line {lineno}: empty sentence or token")
        toks.append(tuple(words))
    return (None if label == "-" else int(label)), domain, tuple(toks)


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip() == "":
                continue
            records.append(parse_line(line, lineno))
    return records


def format_record(label, domain, sentences):
    tag = "-" if label is None else str(label)
    return "\t".join([tag, domain] + [" ".join(s) for s in sentences]) + "\n"


def build_corpus(records, vocab_limit=10000, test_fraction=0.2):
    """Partition (label, domain, token-sentences) records into a Corpus.

    The last ceil(test_fraction * n) labeled source records form the source
    test split; labeled target records form the held-out target test set.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in [0, 1)")
    vocab = Vocabulary.build((s for _, _, sents in records for s in sents), vocab_limit)
    docs = {"src_l": [], "src_u": [], "tgt_u": [], "tgt_l": []}
    for label, domain, sents in records:
        doc = Document(tuple(vocab.encode(s) for s in sents), label, domain, sents)
        key = ("src" if domain == SOURCE else "tgt") + ("_u" if label is None else "_l")
        docs[key].append(doc)
    n_test = math.ceil(test_fraction * len(docs["src_l"]) - 1e-9)
    cut = len(docs["src_l"]) - n_test
    return Corpus(
        source_train=docs["src_l"][:cut],
        source_test=docs["src_l"][cut:],
        source_unlabeled=docs["src_u"],
        target_unlabeled=docs["tgt_u"],
        target_test=docs["tgt_l"],
        vocab=vocab,
        records=list(records),
    )


def load_corpus(source_file, target_file, vocab_limit=10000, test_fraction=0.2):
    records = []
    for path, expected in ((source_file, SOURCE), (target_file, TARGET)):
        for rec in read_records(path):
            if rec[1] != expected:
                raise DataError(f"{path}: found domain {rec[1]!r} in the {expected!r} file")
            records.append(rec)
    return build_corpus(records, vocab_limit, test_fraction)


def save_corpus(corpus, directory):
    """Write source.tsv and target.tsv; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {SOURCE: directory / "source.tsv", TARGET: directory / "target.tsv"}
    for domain, path in paths.items():
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for label, dom, sents in corpus.records:
                if dom == domain:
                    fh.write(format_record(label, dom, sents))
    return paths[SOURCE], paths[TARGET]


def make_batches(documents, batch_size, seed):
    """Seeded shuffle then contiguous slices; the last batch may be short."""
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(documents))
    docs = [documents[i] for i in order]
    return [docs[i:i + batch_size] for i in range(0, len(docs), batch_size)]


class BatchStream:
    """Endless batches over ``documents``, reshuffled on every pass."""

    def __init__(self, documents, batch_size, rng):
        self.documents = list(documents)
        self.batch_size = batch_size
        self.rng = rng
        self._queue = []

    def __len__(self):
        return math.ceil(len(self.documents) / self.batch_size)

    def next(self):
        if not self.documents:
            return []
        if not self._queue:
            self._queue = make_batches(self.documents, self.batch_size, self.rng)[::-1]
        return self._queue.pop()


# --- synthetic corpus ----------------------------------------------------

@dataclass
class SynthConfig:
    pivot_pos: int = 10
    pivot_neg: int = 10
    src_pos: int = 12
    src_neg: int = 12
    tgt_pos: int = 12
    tgt_neg: int = 12
    filler_shared: int = 40
    filler_src: int = 30
    filler_tgt: int = 30
    source_labeled: int = 400
    source_test: int = 100
    source_unlabeled: int = 400
    target_unlabeled: int = 400
    target_test: int = 200
    sentences_per_doc: tuple = (4, 4)  # inclusive range
    words_per_sentence: tuple = (6, 6)
    sentiment_prob: float = 0.25  # chance a position holds a sentiment word
    polarity_purity: float = 0.85  # chance a sentiment word agrees with the latent polarity
    pivot_prob: float = 0.3  # chance a sentiment word is drawn from the pivot pools
    filler_skew: float = 0.8  # chance a filler word comes from the domain's own pool, else shared
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        sizes = [self.pivot_pos, self.pivot_neg, self.src_pos, self.src_neg, self.tgt_pos,
                 self.tgt_neg, self.filler_shared, self.filler_src, self.filler_tgt]
        if min(sizes[:6]) < 1:
            raise ConfigError("every sentiment pool needs at least one word")
        if min(sizes) < 0:
            raise ConfigError("pool sizes must be non-negative")
        for name in ("sentiment_prob", "polarity_purity", "pivot_prob", "filler_skew", "label_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("sentences_per_doc", "words_per_sentence"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must be a range 1 <= lo <= hi")
        if self.filler_shared + self.filler_src + self.filler_tgt == 0 and self.sentiment_prob < 1:
            raise ConfigError("filler pools are empty but sentiment_prob < 1")

    def pools(self):
        """Word pools keyed by role; names encode the role so pools never overlap."""
        layout = [("PIVOT_POS", "pivpos", self.pivot_pos), ("PIVOT_NEG", "pivneg", self.pivot_neg),
                ("SRC_POS", "srcpos", self.src_pos), ("SRC_NEG", "srcneg", self.src_neg),
                ("TGT_POS", "tgtpos", self.tgt_pos), ("TGT_NEG", "tgtneg", self.tgt_neg)]
        pools = {role: [f"{stem}{i:02d}" for i in range(n)] for role, stem, n in layout}
        pools["FILL_SHARED"] = [f"fill{i:02d}" for i in range(self.filler_shared)]
        pools["FILL_SRC"] = [f"fillsrc{i:02d}" for i in range(self.filler_src)]
        pools["FILL_TGT"] = [f"filltgt{i:02d}" for i in range(self.filler_tgt)]
        return pools


def check_pools_disjoint(pools):
    seen = {}
    for role, words in pools.items():
        for w in words:
            if w in seen:
                raise ConfigError(f"word {w!r} is in both {seen[w]} and {role}")
            seen[w] = role


def _synth_doc(cfg, pools, domain, rng):
    polarity = int(rng.random() < 0.5)  # 1 positive
    own = "SRC" if domain == SOURCE else "TGT"
    filler_own = "FILL_SRC" if domain == SOURCE else "FILL_TGT"
    n_sent = int(rng.integers(cfg.sentences_per_doc[0], cfg.sentences_per_doc[1] + 1))
    sentences, votes = [], 0
    for _ in range(n_sent):
        length = int(rng.integers(cfg.words_per_sentence[0], cfg.words_per_sentence[1] + 1))
        sent = []
        for _ in range(length):
            if rng.random() < cfg.sentiment_prob:
                pol = polarity if rng.random() < cfg.polarity_purity else 1 - polarity
                kind = "PIVOT" if rng.random() < cfg.pivot_prob else own
                pool = pools[f"{kind}_{'POS' if pol else 'NEG'}"]
                votes += 1 if pol else -1
            else:
                if rng.random() < cfg.filler_skew:
                    pool = pools[filler_own] or pools["FILL_SHARED"]
                else:
                    pool = pools["FILL_SHARED"] or pools[filler_own]
            sent.append(pool[int(rng.integers(len(pool)))])
        sentences.append(tuple(sent))
    # majority of planted sentiment words; ties fall back to the latent polarity
    label = polarity if votes == 0 else int(votes > 0)
    if rng.random() < cfg.label_noise:
        label = 1 - label
    return label, tuple(sentences)


def generate_synthetic(cfg: SynthConfig, vocab_limit=10000):
    """Seeded synthetic corpus with planted pivots and domain-specific non-pivots.

    Returns (corpus, role table); the role table maps every sentiment or
    filler word to one of ROLES.
    """
    pools = cfg.pools()
    check_pools_disjoint(pools)
    rng = np.random.default_rng(cfg.seed)
    records = []

    def emit(n, domain, labeled):
        for _ in range(n):
            label, sents = _synth_doc(cfg, pools, domain, rng)
            records.append((label if labeled else None, domain, sents))

    emit(cfg.source_labeled + cfg.source_test, SOURCE, True)
    emit(cfg.source_unlabeled, SOURCE, False)
    emit(cfg.target_unlabeled, TARGET, False)
    emit(cfg.target_test, TARGET, True)
    n_lab = cfg.source_labeled + cfg.source_test
    test_fraction = cfg.source_test / n_lab if n_lab else 0.0
    corpus = build_corpus(records, vocab_limit, test_fraction)

    roles = {}
    for role, words in pools.items():
        for w in words:
            roles[w] = role if role in ROLES else "FILLER"
    return corpus, roles


def write_roles(roles, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word in sorted(roles):
            fh.write(f"{word}\t{roles[word]}\n")


def read_roles(path):
    roles = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or parts[1] not in ROLES:
                raise DataError(f"{path}:{lineno}: expected word<TAB>role")
            roles[parts[0]] = parts[1]
    return roles
