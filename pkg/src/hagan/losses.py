"""Loss terms of the discriminator and generator objectives.

All base losses take batches of distributions (n, K) as Tensors and return a
scalar Tensor, averaged over the batch.  Domain label convention: 1 = source,
0 = target; column 0 of p_dom is P(source).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, UsageError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_D: float = 1.0
    lambda_G1: float = 0.2
    lambda_G2: float = 0.02

    def __post_init__(self):
        for name in ("lambda_D", "lambda_G1", "lambda_G2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @classmethod
    def naive(cls):
        """All adversarial weights off: a plain supervised HAN."""
        return cls(0.0, 0.0, 0.0)


def _safe_log(p):
    return ad.log(ad.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))


def _batch(p, what):
    p = ad.as_tensor(p)
    if p.ndim == 1:
        p = ad.reshape(p, (1, p.shape[0]))
    if p.shape[0] == 0:
        raise UsageError(f"{what}: empty batch")
    return p


def _cross_entropy(p, columns):
    n, k = p.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), columns] = 1.0
    return ad.scale(ad.sum_(ad.mul(_safe_log(p), onehot)), -1.0 / n)


def sentiment_loss(p_sen, labels):
    """Mean cross-entropy of p_sen against golden labels (1 = positive = column 0)."""
    p_sen = _batch(p_sen, "sentiment_loss")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (p_sen.shape[0],):
        raise UsageError("sentiment_loss: one label per distribution required")
    return _cross_entropy(p_sen, label_columns(labels, p_sen.shape[1]))


def label_columns(labels, num_classes=2):
    """Column of p_sen holding each label's probability.

    Binary labels follow the discriminator's output order [p_p, p_n]:
    positive (1) -> column 0, negative (0) -> column 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes == 2:
        if np.any((labels != 0) & (labels != 1)):
            raise UsageError("binary sentiment labels must be 0 or 1")
        return 1 - labels
    return labels


def domain_loss(p_dom, is_source):
    """Mean binary cross-entropy of P(source) against the true domain."""
    p_dom = _batch(p_dom, "domain_loss")
    is_source = np.atleast_1d(np.asarray(is_source, dtype=np.int64))
    if is_source.shape != (p_dom.shape[0],):
        raise UsageError("domain_loss: one domain label per distribution required")
    return _cross_entropy(p_dom, 1 - is_source)


def domain_confusion_loss(p_dom, is_source=None):
    """domain_loss with every (target) label masked as source."""
    p_dom = _batch(p_dom, "domain_confusion_loss")
    if is_source is not None and np.any(np.asarray(is_source, dtype=bool)):
        raise UsageError("domain_confusion_loss: batch must contain only target documents")
    return _cross_entropy(p_dom, np.zeros(p_dom.shape[0], dtype=np.int64))


def entropy_loss(p_sen, is_source=None):
    """Mean entropy -sum_j p_j ln p_j of the sentiment predictions (0 ln 0 = 0)."""
    p_sen = _batch(p_sen, "entropy_loss")
    if is_source is not None and np.any(np.asarray(is_source, dtype=bool)):
        raise UsageError("entropy_loss: batch must contain only target documents")
    n = p_sen.shape[0]
    return ad.scale(ad.sum_(ad.mul(p_sen, _safe_log(p_sen))), -1.0 / n)


def discriminator_loss(l_sen, l_dom, weights):
    return l_sen + weights.lambda_D * l_dom


def generator_loss(l_sen, l_dom_c, l_ent, weights):
    return l_sen + weights.lambda_G1 * l_dom_c + weights.lambda_G2 * l_ent
