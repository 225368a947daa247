"""Straight-line numpy reimplementation of the encoder, with no tape involved.

Used only by tests as an independent check of the batched implementation.
"""

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def gru_step(x, h, cell):
    v = {k: p.values for k, p in vars(cell).items()}
    z = sigmoid(v["W_z"] @ x + v["U_z"] @ h + v["b_z"])
    r = sigmoid(v["W_r"] @ x + v["U_r"] @ h + v["b_r"])
    cand = np.tanh(v["W_h"] @ x + v["U_h"] @ (r * h) + v["b_h"])
    return (1.0 - z) * h + z * cand


def bigru(xs, fwd, bwd):
    H = fwd.U_z.shape[0]
    f, h = [], np.zeros(H)
    for x in xs:
        h = gru_step(x, h, fwd)
        f.append(h)
    b, h = [None] * len(xs), np.zeros(bwd.U_z.shape[0])
    for t in reversed(range(len(xs))):
        h = gru_step(xs[t], h, bwd)
        b[t] = h
    return [np.concatenate([f[t], b[t]]) for t in range(len(xs))]


def attend(states, query):
    w = softmax(np.array([s @ query for s in states]))
    return w, sum(wi * s for wi, s in zip(w, states))


def encode(doc, params):
    M = params.embedding.values
    sent_vecs, word_w = [], []
    for sent in doc:
        states = bigru([M[t] for t in sent], params.word_fwd, params.word_bwd)
        w, s = attend(states, params.word_query.values)
        sent_vecs.append(s)
        word_w.append(w)
    states = bigru(sent_vecs, params.sent_fwd, params.sent_bwd)
    a, d = attend(states, params.sent_query.values)
    return d, word_w, a
