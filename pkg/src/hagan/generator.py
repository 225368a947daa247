"""Hierarchical attention encoder: word Bi-GRU + attention, sentence Bi-GRU + attention.

Batches of documents are encoded without padding: sentences are grouped by
length for the word-level pass and documents by sentence count for the
sentence-level pass, so every group is a dense array and the result is
identical to encoding each document on its own.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import DataError, ShapeError, UsageError

INIT_SCALE = 0.3  # half-width of the uniform initialisation


@dataclass
class GruCellParams:
    """One GRU direction: input weights W_*, recurrent weights U_*, biases b_*."""

    W_z: Parameter
    U_z: Parameter
    b_z: Parameter
    W_r: Parameter
    U_r: Parameter
    b_r: Parameter
    W_h: Parameter
    U_h: Parameter
    b_h: Parameter

    @property
    def hidden_size(self):
        return self.U_z.shape[0]

    @property
    def input_size(self):
        return self.W_z.shape[1]

    def parameters(self):
        return [self.W_z, self.U_z, self.b_z, self.W_r, self.U_r, self.b_r,
                self.W_h, self.U_h, self.b_h]

    @classmethod
    def init(cls, prefix, input_size, hidden_size, rng, scale=INIT_SCALE):
        def weight(name, shape):
            return Parameter(f"{prefix}.{name}", rng.uniform(-scale, scale, shape))

        def bias(name):
            return Parameter(f"{prefix}.{name}", np.zeros(hidden_size))

        return cls(
            W_z=weight("W_z", (hidden_size, input_size)),
            U_z=weight("U_z", (hidden_size, hidden_size)),
            b_z=bias("b_z"),
            W_r=weight("W_r", (hidden_size, input_size)),
            U_r=weight("U_r", (hidden_size, hidden_size)),
            b_r=bias("b_r"),
            W_h=weight("W_h", (hidden_size, input_size)),
            U_h=weight("U_h", (hidden_size, hidden_size)),
            b_h=bias("b_h"),
        )


@dataclass
class GeneratorParams:
    embedding: Parameter  # M_e, vocab x embed
    word_fwd: GruCellParams
    word_bwd: GruCellParams
    word_query: Parameter  # q_w
    sent_fwd: GruCellParams
    sent_bwd: GruCellParams
    sent_query: Parameter  # q_s

    def parameters(self):
        return [self.embedding, *self.word_fwd.parameters(), *self.word_bwd.parameters(),
                self.word_query, *self.sent_fwd.parameters(), *self.sent_bwd.parameters(),
                self.sent_query]

    @property
    def repr_size(self):
        return self.sent_query.shape[0]

    @classmethod
    def init(cls, vocab_size, embed_dim, word_hidden, sent_hidden, rng, scale=INIT_SCALE):
        def uniform(name, shape):
            return Parameter(name, rng.uniform(-scale, scale, shape))

        params = cls(
            embedding=uniform("gen.embedding", (vocab_size, embed_dim)),
            word_fwd=GruCellParams.init("gen.word_fwd", embed_dim, word_hidden, rng, scale),
            word_bwd=GruCellParams.init("gen.word_bwd", embed_dim, word_hidden, rng, scale),
            word_query=uniform("gen.word_query", (2 * word_hidden,)),
            sent_fwd=GruCellParams.init("gen.sent_fwd", 2 * word_hidden, sent_hidden, rng, scale),
            sent_bwd=GruCellParams.init("gen.sent_bwd", 2 * word_hidden, sent_hidden, rng, scale),
            sent_query=uniform("gen.sent_query", (2 * sent_hidden,)),
        )
        params.validate()
        return params

    def validate(self):
        embed_dim = self.embedding.shape[1]
        word_h = self.word_fwd.hidden_size
        sent_h = self.sent_fwd.hidden_size
        checks = [
            ("word_fwd input", self.word_fwd.input_size, embed_dim),
            ("word_bwd input", self.word_bwd.input_size, embed_dim),
            ("word_bwd hidden", self.word_bwd.hidden_size, word_h),
            ("word_query", self.word_query.shape[0], 2 * word_h),
            ("sent_fwd input", self.sent_fwd.input_size, 2 * word_h),
            ("sent_bwd input", self.sent_bwd.input_size, 2 * word_h),
            ("sent_bwd hidden", self.sent_bwd.hidden_size, sent_h),
            ("sent_query", self.sent_query.shape[0], 2 * sent_h),
        ]
        for what, got, want in checks:
            if got != want:
                raise ShapeError("GeneratorParams", (got,), (want,), detail=what)


@dataclass
class AttentionRecord:
    word_weights: list  # one array per sentence, alpha_ij
    sentence_weights: np.ndarray  # alpha_i

    @property
    def combined(self):
        """alpha_ij * alpha_i for every word, as one array per sentence."""
        return [w * a for w, a in zip(self.word_weights, self.sentence_weights)]


def embed_lookup(doc, embedding, doc_index=0):
    """Embedding rows for each sentence of ``doc`` (a list of token-id lists)."""
    vocab = embedding.shape[0]
    out = []
    for sent in doc:
        ids = np.asarray(sent, dtype=np.int64)
        if ids.size == 0:
            raise DataError(f"document {doc_index}: empty sentence")
        if ids.min() < 0 or ids.max() >= vocab:
            raise DataError(f"document {doc_index}: token id out of range [0, {vocab})")
        out.append(ad.embedding(embedding, ids))
    return out


def _project(x, W, b):
    return ad.add(ad.matmul(x, ad.transpose(W)), b)


def _recurrent(p):
    return ad.transpose(p.U_z), ad.transpose(p.U_r), ad.transpose(p.U_h)


def _gru_update(xz, xr, xh, h_prev, recurrent):
    """GRU recurrence given input projections W_* x + b_* and transposed U_*."""
    Uz, Ur, Uh = recurrent
    z = ad.sigmoid(ad.add(xz, ad.matmul(h_prev, Uz)))
    r = ad.sigmoid(ad.add(xr, ad.matmul(h_prev, Ur)))
    cand = ad.tanh(ad.add(xh, ad.matmul(ad.mul(r, h_prev), Uh)))
    # h = (1 - z) * h_prev + z * cand  ==  h_prev + z * (cand - h_prev)
    return ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))


def gru_step(x, h_prev, params):
    """One GRU step; ``x`` and ``h_prev`` may carry leading batch dimensions."""
    x, h_prev = ad.as_tensor(x), ad.as_tensor(h_prev)
    if x.shape[-1] != params.input_size:
        raise ShapeError("gru_step", x.shape, params.W_z.shape, detail="input size")
    if h_prev.shape[-1] != params.hidden_size:
        raise ShapeError("gru_step", h_prev.shape, params.U_z.shape, detail="hidden size")
    return _gru_update(_project(x, params.W_z, params.b_z),
                       _project(x, params.W_r, params.b_r),
                       _project(x, params.W_h, params.b_h), h_prev, _recurrent(params))


def _run_direction(seq, params, reverse):
    T = seq.shape[-2]
    xz = _project(seq, params.W_z, params.b_z)
    xr = _project(seq, params.W_r, params.b_r)
    xh = _project(seq, params.W_h, params.b_h)
    h = Tensor(np.zeros(seq.shape[:-2] + (params.hidden_size,)))
    recurrent = _recurrent(params)
    states = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        at = (Ellipsis, t, slice(None))
        h = _gru_update(xz[at], xr[at], xh[at], h, recurrent)
        states[t] = h
    return ad.stack(states, axis=-2)


def bigru_encode(seq, fwd, bwd):
    """Concatenated forward/backward states for a (..., T, input) sequence.

    A list of vectors is also accepted and stacked along the time axis.
    """
    if isinstance(seq, (list, tuple)):
        if not seq:
            raise UsageError("bigru_encode: empty sequence")
        seq = ad.stack(list(seq), axis=0)
    seq = ad.as_tensor(seq)
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise UsageError(f"bigru_encode: empty sequence (shape {seq.shape})")
    if seq.shape[-1] != fwd.input_size or seq.shape[-1] != bwd.input_size:
        raise ShapeError("bigru_encode", seq.shape, fwd.W_z.shape)
    return ad.concat([_run_direction(seq, fwd, False), _run_direction(seq, bwd, True)], axis=-1)


def attention_pool(states, query):
    """Softmax(states . query) weights and the weighted sum of ``states``.

    ``states`` has shape (..., T, D); returns weights (..., T) and pooled (..., D).
    """
    if isinstance(states, (list, tuple)):
        if not states:
            raise UsageError("attention_pool: no states")
        states = ad.stack(list(states), axis=0)
    states, query = ad.as_tensor(states), ad.as_tensor(query)
    if states.ndim < 2 or states.shape[-2] == 0:
        raise UsageError(f"attention_pool: no states (shape {states.shape})")
    if states.shape[-1] != query.shape[0]:
        raise ShapeError("attention_pool", states.shape, query.shape)
    weights = ad.softmax(ad.matmul(states, query), axis=-1)
    w = ad.reshape(weights, weights.shape + (1,))
    pooled = ad.sum_(ad.mul(states, w), axis=-2)
    return weights, pooled


def _validate(docs, vocab):
    for k, doc in enumerate(docs):
        if len(doc) == 0:
            raise DataError(f"document {k}: no sentences")
        for sent in doc:
            if len(sent) == 0:
                raise DataError(f"document {k}: empty sentence")
            if min(sent) < 0 or max(sent) >= vocab:
                raise DataError(f"document {k}: token id out of range [0, {vocab})")


def encode_batch(docs, params):
    """Encode documents given as token-id sentence lists.

    Returns the (n, 2 * sent_hidden) representation tensor and one
    AttentionRecord per document.
    """
    docs = [getattr(d, "sentences", d) for d in docs]
    if not docs:
        raise UsageError("encode_batch: no documents")
    _validate(docs, params.embedding.shape[0])

    # word level: group every sentence in the batch by its length
    by_len = defaultdict(list)
    for k, doc in enumerate(docs):
        for i, sent in enumerate(doc):
            by_len[len(sent)].append((k, i))
    row_of = {}
    pooled_groups, word_w = [], {}
    row = 0
    for T in sorted(by_len):
        members = by_len[T]
        ids = np.array([docs[k][i] for k, i in members], dtype=np.int64)
        emb = ad.embedding(params.embedding, ids)
        states = bigru_encode(emb, params.word_fwd, params.word_bwd)
        weights, pooled = attention_pool(states, params.word_query)
        pooled_groups.append(pooled)
        for g, key in enumerate(members):
            row_of[key] = row + g
            word_w[key] = weights.values[g]
        row += len(members)
    sentence_vectors = pooled_groups[0] if len(pooled_groups) == 1 else ad.concat(pooled_groups, axis=0)

    # sentence level: group documents by sentence count
    by_count = defaultdict(list)
    for k, doc in enumerate(docs):
        by_count[len(doc)].append(k)
    doc_groups, order, sent_w = [], [], {}
    for L in sorted(by_count):
        members = by_count[L]
        idx = np.array([[row_of[(k, i)] for i in range(L)] for k in members], dtype=np.int64)
        seq = ad.take(sentence_vectors, idx)
        states = bigru_encode(seq, params.sent_fwd, params.sent_bwd)
        weights, pooled = attention_pool(states, params.sent_query)
        doc_groups.append(pooled)
        order.extend(members)
        for g, k in enumerate(members):
            sent_w[k] = weights.values[g]
    d = doc_groups[0] if len(doc_groups) == 1 else ad.concat(doc_groups, axis=0)
    if order != list(range(len(docs))):
        d = ad.take(d, np.argsort(order))

    records = [
        AttentionRecord(word_weights=[word_w[(k, i)].copy() for i in range(len(doc))],
                        sentence_weights=sent_w[k].copy())
        for k, doc in enumerate(docs)
    ]
    return d, records


def encode_document(doc, params):
    """Encode one document; returns (d, AttentionRecord) with d of length 2 * sent_hidden."""
    d, records = encode_batch([doc], params)
    return ad.take(d, 0), records[0]
