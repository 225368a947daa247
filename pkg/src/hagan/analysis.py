"""Attention-based word scores, pivot classification, representation projection and domain probe."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DegenerateError, UsageError
from .generator import encode_batch

ATTENTION_HEADER = "doc_id\tsent_idx\tword_idx\ttoken\tword_attn\tsent_attn\tcombined"
PIVOT_HEADER = "word\tcategory\than_rank\thagan_rank"
PROJECTION_HEADER = "doc_id\tx\ty\tdomain\tlabel"
EVAL_CHUNK = 512


def _token(doc, i, j):
    tokens = getattr(doc, "tokens", ())
    if tokens:
        return tokens[i][j]
    sentences = getattr(doc, "sentences", doc)
    return str(sentences[i][j])


def attention_rows(generator, documents):
    """One row per word occurrence: (doc_id, sent_idx, word_idx, token, word, sentence, combined)."""
    rows = []
    for start in range(0, len(documents), EVAL_CHUNK):
        chunk = documents[start:start + EVAL_CHUNK]
        _, records = encode_batch(chunk, generator)
        for k, (doc, rec) in enumerate(zip(chunk, records)):
            for i, (ww, sw) in enumerate(zip(rec.word_weights, rec.sentence_weights)):
                for j, w in enumerate(ww):
                    rows.append((start + k, i, j, _token(doc, i, j), float(w), float(sw),
                                 float(w * sw)))
    return rows


def write_attention(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ATTENTION_HEADER + "\n")
        for doc_id, i, j, tok, w, s, c in rows:
            fh.write(f"{doc_id}\t{i}\t{j}\t{tok}\t{w:.17g}\t{s:.17g}\t{c:.17g}\n")


def read_attention(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != ATTENTION_HEADER:
            raise DataError(f"{path}: not an attention dump")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), parts[3],
                         float(parts[4]), float(parts[5]), float(parts[6])))
    return rows


@dataclass
class WordScoreTable:
    """Mean combined attention (word weight x sentence weight) per word type."""

    scores: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows, min_count=1):
        total, count = defaultdict(float), defaultdict(int)
        for row in rows:
            tok, combined = row[3], row[6]
            total[tok] += combined
            count[tok] += 1
        keep = [t for t in total if count[t] >= min_count]
        return cls({t: total[t] / count[t] for t in keep}, {t: count[t] for t in keep})

    def quantile_ranks(self):
        """Each word's score rank scaled to [0, 1] (ties share their average rank)."""
        words = sorted(self.scores)
        if not words:
            return {}
        if len(words) == 1:
            return {words[0]: 1.0}
        r = rankdata([self.scores[w] for w in words], method="average")
        return {w: (ri - 1.0) / (len(words) - 1.0) for w, ri in zip(words, r)}


def extract_word_scores(generator, documents, min_count=1):
    if not documents:
        raise UsageError("extract_word_scores: no documents")
    return WordScoreTable.from_rows(attention_rows(generator, documents), min_count)


@dataclass
class PivotReport:
    pivots: list  # (word, han_rank, hagan_rank), best first
    source_nonpivots: list
    target_nonpivots: list

    def rows(self):
        for category, items in (("PIVOT", self.pivots), ("SOURCE_NONPIVOT", self.source_nonpivots),
                                ("TARGET_NONPIVOT", self.target_nonpivots)):
            for word, han, hagan in items:
                yield word, category, han, hagan

    def to_tsv(self):
        lines = [PIVOT_HEADER]
        lines += [f"{w}\t{c}\t{h:.6f}\t{g:.6f}" for w, c, h, g in self.rows()]
        return "\n".join(lines) + "\n"


def classify_pivots(han_scores, hagan_scores, high=0.8, low=0.5):
    """Split words into pivots and source/target non-pivots by attention rank.

    Ranks are quantiles within each table; a word missing from a table gets
    rank 0 there.  High means rank >= ``high``, low means rank <= ``low``.
    """
    if not (0.0 < low < high < 1.0):
        raise UsageError(f"thresholds must satisfy 0 < low < high < 1, got low={low}, high={high}")
    han_r, hagan_r = han_scores.quantile_ranks(), hagan_scores.quantile_ranks()
    pivots, src, tgt = [], [], []
    for word in sorted(set(han_r) | set(hagan_r)):
        a, b = han_r.get(word, 0.0), hagan_r.get(word, 0.0)
        item = (word, a, b)
        if a >= high and b >= high:
            pivots.append(item)
        elif a >= high and b <= low:
            src.append(item)
        elif a <= low and b >= high:
            tgt.append(item)
    pivots.sort(key=lambda t: (-min(t[1], t[2]), -(t[1] + t[2]), t[0]))
    src.sort(key=lambda t: (-(t[1] - t[2]), t[0]))
    tgt.sort(key=lambda t: (-(t[2] - t[1]), t[0]))
    return PivotReport(pivots, src, tgt)


# --- representation projection ----------------------------------------------

@dataclass
class ReprProjection:
    coords: np.ndarray  # (n, 2)
    domains: list
    labels: list
    components: np.ndarray = None  # (2, dim)
    eigenvalues: np.ndarray = None

    def to_tsv(self):
        lines = [PROJECTION_HEADER]
        for k, ((x, y), dom, lab) in enumerate(zip(self.coords, self.domains, self.labels)):
            tag = "-" if lab is None else str(lab)
            lines.append(f"{k}\t{x:.17g}\t{y:.17g}\t{dom}\t{tag}")
        return "\n".join(lines) + "\n"


def top_components(X, k=2, seed=0, max_iter=200, tol=1e-9):
    """Top-k principal directions of centred data via power iteration with deflation.

    Returns (components (k, dim), eigenvalues (k,)).
    """
    X = np.asarray(X, dtype=np.float64)
    n, dim = X.shape
    cov = X.T @ X / max(n - 1, 1)
    if np.trace(cov) <= np.finfo(np.float64).tiny:
        raise DegenerateError("representations have zero variance")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comps, eigs = [], []
    for _ in range(min(k, dim)):
        v = rng.standard_normal(dim)
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = cov @ v
            for c in comps:  # keep orthogonal to earlier components
                w -= (w @ c) * c
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            new_lam = float(v @ cov @ v)
            v = w / norm
            converged = abs(new_lam - lam) <= tol * max(abs(new_lam), np.finfo(np.float64).tiny)
            lam = new_lam
            if converged:
                break
        lam = float(v @ cov @ v)
        if np.abs(v).max() > 0 and v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        eigs.append(lam)
        cov = cov - lam * np.outer(v, v)
    return np.array(comps), np.array(eigs)


def project_2d(reprs, seed=0):
    reprs = np.asarray(reprs, dtype=np.float64)
    if reprs.shape[0] < 3:
        raise UsageError("need at least 3 documents to project")
    centred = reprs - reprs.mean(axis=0)
    comps, eigs = top_components(centred, 2, seed=seed)
    coords = centred @ comps.T
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    return coords, comps, eigs


def export_representations(generator, documents, seed=0):
    """2-D PCA coordinates of every document representation d."""
    if len(documents) < 3:
        raise UsageError("export_representations: need at least 3 documents")
    chunks = [encode_batch(documents[i:i + EVAL_CHUNK], generator)[0].values
              for i in range(0, len(documents), EVAL_CHUNK)]
    coords, comps, eigs = project_2d(np.concatenate(chunks), seed)
    return ReprProjection(coords, [d.domain for d in documents],
                          [d.sentiment for d in documents], comps, eigs)


# --- domain probe ----------------------------------------------------------

def fit_logistic(X, y, l2=1e-2, max_iter=100, tol=1e-10):
    """L2-regularised logistic regression by Newton's method; returns (w, b)."""
    n, dim = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(dim + 1)
    reg = np.full(dim + 1, l2)
    reg[-1] = 0.0
    for _ in range(max_iter):
        z = A @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grad = A.T @ (p - y) / n + reg * theta
        H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(reg) + 1e-12 * np.eye(dim + 1)
        step = np.linalg.solve(H, grad)
        theta -= step
        if np.max(np.abs(step)) < tol:
            break
    return theta[:-1], theta[-1]


def domain_probe_accuracy(source_reprs, target_reprs, seed=0, train_fraction=0.5):
    """Held-out accuracy of a fresh logistic classifier predicting the domain of d."""
    X = np.vstack([source_reprs, target_reprs])
    y = np.r_[np.ones(len(source_reprs)), np.zeros(len(target_reprs))]
    if len(X) < 4 or len(source_reprs) == 0 or len(target_reprs) == 0:
        raise UsageError("domain probe needs documents from both domains")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(X))
    cut = int(round(train_fraction * len(X)))
    tr, te = order[:cut], order[cut:]
    mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd
    w, b = fit_logistic(Z[tr], y[tr])
    pred = (Z[te] @ w + b) > 0
    return float(np.mean(pred == y[te]))
