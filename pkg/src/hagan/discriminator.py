"""MLP discriminator with a (C+1)-way softmax head.

The first C outputs are sentiment classes, the last one is "target domain".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import DegenerateError, ShapeError
from .generator import INIT_SCALE


@dataclass
class DiscriminatorParams:
    hidden: list  # [(W, b), ...], tanh + dropout after each
    head_W: Parameter
    head_b: Parameter
    keep_prob: float = 0.75
    num_classes: int = field(init=False)

    def __post_init__(self):
        self.num_classes = self.head_W.shape[0] - 1

    @property
    def input_size(self):
        first = self.hidden[0][0] if self.hidden else self.head_W
        return first.shape[1]

    def parameters(self):
        out = []
        for W, b in self.hidden:
            out += [W, b]
        return out + [self.head_W, self.head_b]

    @classmethod
    def init(cls, input_size, widths, num_classes, rng, keep_prob=0.75, scale=INIT_SCALE):
        hidden = []
        prev = input_size
        for i, width in enumerate(widths):
            W = Parameter(f"disc.hidden{i}.W", rng.uniform(-scale, scale, (width, prev)))
            b = Parameter(f"disc.hidden{i}.b", np.zeros(width))
            hidden.append((W, b))
            prev = width
        head_W = Parameter("disc.head.W", rng.uniform(-scale, scale, (num_classes + 1, prev)))
        head_b = Parameter("disc.head.b", np.zeros(num_classes + 1))
        return cls(hidden=hidden, head_W=head_W, head_b=head_b, keep_prob=keep_prob)


def discriminate(d, params, training=False, rng=None):
    """Class distribution p over C sentiment classes plus the target-domain class."""
    d = ad.as_tensor(d)
    if d.shape[-1] != params.input_size:
        raise ShapeError("discriminate", d.shape, (params.input_size,))
    h = d
    for W, b in params.hidden:
        h = ad.tanh(ad.add(ad.matmul(h, ad.transpose(W)), b))
        h = ad.dropout(h, params.keep_prob, training, rng)
    logits = ad.add(ad.matmul(h, ad.transpose(params.head_W)), params.head_b)
    return ad.softmax(logits, axis=-1)


def sentiment_dist(p, num_classes=None):
    """Renormalise the sentiment entries of p: p_sen[k] = p_k / sum_{j<C} p_j."""
    p = ad.as_tensor(p)
    C = p.shape[-1] - 1 if num_classes is None else num_classes
    sent = ad.take(p, (Ellipsis, slice(0, C)))
    mass = ad.sum_(sent, axis=-1, keepdims=True)
    if np.any(mass.values <= np.finfo(np.float64).tiny):
        raise DegenerateError("sentiment_dist: no probability mass on sentiment classes")
    return ad.div(sent, mass)


def domain_dist(p, num_classes=None):
    """[P(source), P(target)] = [sum of sentiment entries, p_t]."""
    p = ad.as_tensor(p)
    C = p.shape[-1] - 1 if num_classes is None else num_classes
    if p.shape[-1] != C + 1:
        raise ShapeError("domain_dist", p.shape, (C + 1,))
    source = ad.sum_(ad.take(p, (Ellipsis, slice(0, C))), axis=-1, keepdims=True)
    target = ad.take(p, (Ellipsis, slice(C, C + 1)))
    return ad.concat([source, target], axis=-1)
