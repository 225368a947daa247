"""Alternating discriminator/generator training with RMSProp, evaluation and checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .analysis import domain_probe_accuracy
from .autodiff import Tape
from .corpus import BatchStream
from .discriminator import DiscriminatorParams, discriminate, domain_dist, sentiment_dist
from .errors import ConfigError, DataError, DivergenceError, FreezeViolation, UsageError
from .generator import GeneratorParams, encode_batch
from .losses import (
    LossWeights,
    discriminator_loss,
    domain_confusion_loss,
    domain_loss,
    entropy_loss,
    generator_loss,
    label_columns,
    sentiment_loss,
)

log = logging.getLogger(__name__)

CKPT_HEADER = "HAGAN-CKPT v1"
EVAL_CHUNK = 512

# independent RNG streams derived from the seed
_INIT, _LABELED, _DOMAIN_SRC, _DOMAIN_TGT, _TARGET, _DROPOUT, _PROBE = range(7)


@dataclass
class TrainConfig:
    lambda_D: float = 1.0
    lambda_G1: float = 0.2
    lambda_G2: float = 0.02
    embed_dim: int = 16
    word_hidden: int = 16
    sent_hidden: int = 16
    disc_widths: tuple = (32, 16)
    num_classes: int = 2
    batch_size: int = 100
    learning_rate: float = 0.0005
    rho: float = 0.9
    eps: float = 1e-8
    epochs: int = 10
    disc_steps: int = 1  # discriminator steps per alternation round
    gen_steps: int = 1  # generator steps per alternation round
    keep_prob: float = 0.75
    init_scale: float = 0.3
    seed: int = 0
    vocab_limit: int = 10000
    test_fraction: float = 0.2
    check_freezing: bool = False

    def __post_init__(self):
        self.disc_widths = tuple(int(w) for w in self.disc_widths)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must lie in (0, 1]")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be > 0")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho must lie in [0, 1)")
        if self.epochs < 0 or self.disc_steps < 0 or self.gen_steps < 0:
            raise ConfigError("epochs and step counts must be non-negative")
        self.weights  # validates the lambdas

    @property
    def weights(self):
        return LossWeights(self.lambda_D, self.lambda_G1, self.lambda_G2)

    @property
    def is_naive(self):
        return self.lambda_D == self.lambda_G1 == self.lambda_G2 == 0.0

    def naive(self):
        """Same config with every adversarial weight zeroed."""
        return dataclasses.replace(self, lambda_D=0.0, lambda_G1=0.0, lambda_G2=0.0)

    def rng(self, stream):
        return np.random.default_rng((self.seed, stream))


@dataclass
class Model:
    generator: GeneratorParams
    discriminator: DiscriminatorParams

    def parameters(self):
        return self.generator.parameters() + self.discriminator.parameters()


def build_model(config, vocab_size):
    rng = config.rng(_INIT)
    gen = GeneratorParams.init(vocab_size, config.embed_dim, config.word_hidden,
                               config.sent_hidden, rng, scale=config.init_scale)
    disc = DiscriminatorParams.init(gen.repr_size, config.disc_widths, config.num_classes,
                                    rng, keep_prob=config.keep_prob, scale=config.init_scale)
    return Model(gen, disc)


def params_hash(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


class _frozen:
    """Mark ``frozen`` parameters non-trainable for the duration of a phase."""

    def __init__(self, frozen, active):
        self.frozen, self.active = frozen, active

    def __enter__(self):
        for p in self.frozen:
            p.trainable = False
        for p in self.active:
            p.trainable = True
            p.zero_grad()

    def __exit__(self, *exc):
        for p in self.frozen:
            p.trainable = True
        return False


# --- optimizer ----------------------------------------------------------------

@dataclass
class OptimizerState:
    """Running mean of squared gradients per parameter name."""

    mean_square: dict = field(default_factory=dict)

    def slot(self, p):
        s = self.mean_square.get(p.name)
        if s is None:
            s = self.mean_square[p.name] = np.zeros_like(p.values)
        return s


def rmsprop_step(params, state, config):
    """s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / sqrt(s + eps); then zero g."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name}")
    for p in params:
        g = p.grad
        s = state.slot(p)
        s *= config.rho
        s += (1.0 - config.rho) * g * g
        p.values -= config.learning_rate * g / np.sqrt(s + config.eps)
        p.zero_grad()


# --- phases ---------------------------------------------------------------------

def _labels(docs):
    labels = [d.sentiment for d in docs]
    if any(y is None for y in labels):
        raise DataError("sentiment loss needs labeled documents")
    return np.array(labels, dtype=np.int64)


def _check_finite(value, what):
    if not math.isfinite(value):
        raise DivergenceError(f"{what} is not finite ({value})")


def _freeze_guard(frozen, config, audit, phase):
    before = params_hash(frozen) if config.check_freezing else None

    def done():
        if before is None:
            return
        after = params_hash(frozen)
        if audit is not None:
            audit.append((phase, before, after))
        if after != before:
            raise FreezeViolation(f"frozen parameters changed during {phase} phase")
    return done


def train_discriminator_phase(model, labeled, domain_batch, config, state, rng=None, audit=None):
    """One step on L_D = L_sen + lambda_D L_dom with the generator frozen.

    Returns the value of L_D.
    """
    weights = config.weights
    gen_params, disc_params = model.generator.parameters(), model.discriminator.parameters()
    use_domain = weights.lambda_D > 0 and len(domain_batch) > 0
    docs = list(labeled) + (list(domain_batch) if use_domain else [])
    done = _freeze_guard(gen_params, config, audit, "discriminator")
    with _frozen(gen_params, disc_params):
        with Tape() as tape:
            d, _ = encode_batch(docs, model.generator)
            p = discriminate(d, model.discriminator, training=True, rng=rng)
            n = len(labeled)
            l_sen = sentiment_loss(sentiment_dist(p[:n]), _labels(labeled))
            l_dom = 0.0
            if use_domain:
                l_dom = domain_loss(domain_dist(p[n:]), [x.is_source for x in domain_batch])
            loss = discriminator_loss(l_sen, l_dom, weights)
        value = loss.item()
        _check_finite(value, "L_D")
        tape.backward(loss)
        rmsprop_step(disc_params, state, config)
    done()
    return value


def train_generator_phase(model, labeled, target_batch, config, state, rng=None, audit=None):
    """One step on L_G = L_sen + lambda_G1 L_dom^c + lambda_G2 L_ent with the discriminator frozen."""
    weights = config.weights
    gen_params, disc_params = model.generator.parameters(), model.discriminator.parameters()
    if any(x.is_source for x in target_batch):
        raise UsageError("generator phase: target batch contains source documents")
    use_target = (weights.lambda_G1 > 0 or weights.lambda_G2 > 0) and len(target_batch) > 0
    docs = list(labeled) + (list(target_batch) if use_target else [])
    done = _freeze_guard(disc_params, config, audit, "generator")
    with _frozen(disc_params, gen_params):
        with Tape() as tape:
            d, _ = encode_batch(docs, model.generator)
            p = discriminate(d, model.discriminator, training=True, rng=rng)
            n = len(labeled)
            l_sen = sentiment_loss(sentiment_dist(p[:n]), _labels(labeled))
            l_conf = l_ent = 0.0
            if use_target:
                p_t = p[n:]
                l_conf = domain_confusion_loss(domain_dist(p_t))
                l_ent = entropy_loss(sentiment_dist(p_t))
            loss = generator_loss(l_sen, l_conf, l_ent, weights)
        value = loss.item()
        _check_finite(value, "L_G")
        tape.backward(loss)
        rmsprop_step(gen_params, state, config)
    done()
    return value


# --- evaluation -----------------------------------------------------------------

def represent(model, docs):
    """Document representations (n, 2 * sent_hidden) as a plain array, no tape."""
    out = []
    for i in range(0, len(docs), EVAL_CHUNK):
        d, _ = encode_batch(docs[i:i + EVAL_CHUNK], model.generator)
        out.append(d.values)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.generator.repr_size))


def predict_proba(model, docs):
    return discriminate(represent(model, docs), model.discriminator, training=False).values


def predict(model, docs):
    """Predicted sentiment labels; ties go to the lower column (positive for binary)."""
    p = predict_proba(model, docs)
    C = model.discriminator.num_classes
    cols = np.argmax(p[:, :C], axis=1)
    return 1 - cols if C == 2 else cols


def evaluate(model, docs):
    """Accuracy of argmax p_sen against golden labels."""
    if not docs:
        raise UsageError("evaluate: no documents")
    return float(np.mean(predict(model, docs) == _labels(docs)))


@dataclass
class EpochRecord:
    epoch: int
    L_D: float
    L_G: float
    src_acc: float
    tgt_acc: float
    domain_probe_acc: float

    def tsv(self):
        return (f"{self.epoch}\t{self.L_D:.6f}\t{self.L_G:.6f}\t{self.src_acc:.6f}"
                f"\t{self.tgt_acc:.6f}\t{self.domain_probe_acc:.6f}")


LOG_HEADER = "epoch\tL_D\tL_G\tsrc_acc\ttgt_acc\tdomain_probe_acc"


def format_log(records):
    return "\n".join([LOG_HEADER] + [r.tsv() for r in records]) + "\n"


def _objective_values(model, view, config):
    """Full-set L_D and L_G in eval mode (no dropout)."""
    w = config.weights
    C = model.discriminator.num_classes
    p_lab = predict_proba(model, view.source_train)
    p_tgt = predict_proba(model, view.target_unlabeled) if view.target_unlabeled else None
    p_src = predict_proba(model, view.source_all)
    l_sen = sentiment_loss(sentiment_dist(p_lab, C), _labels(view.source_train)).item()
    l_dom = l_conf = l_ent = 0.0
    if p_tgt is not None:
        p_all = np.concatenate([p_src, p_tgt])
        is_src = np.r_[np.ones(len(p_src)), np.zeros(len(p_tgt))]
        l_dom = domain_loss(domain_dist(p_all, C), is_src).item()
        l_conf = domain_confusion_loss(domain_dist(p_tgt, C)).item()
        l_ent = entropy_loss(sentiment_dist(p_tgt, C)).item()
    return (float(discriminator_loss(l_sen, l_dom, w)),
            float(generator_loss(l_sen, l_conf, l_ent, w)))


def epoch_metrics(model, corpus, view, config, epoch):
    L_D, L_G = _objective_values(model, view, config)
    src_acc = evaluate(model, corpus.source_test) if corpus.source_test else float("nan")
    tgt_acc = evaluate(model, corpus.target_test) if corpus.target_test else float("nan")
    probe = float("nan")
    src_docs = view.source_unlabeled or view.source_train
    if src_docs and view.target_unlabeled:
        probe = domain_probe_accuracy(represent(model, src_docs),
                                      represent(model, view.target_unlabeled),
                                      seed=config.rng(_PROBE))
    rec = EpochRecord(epoch, L_D, L_G, src_acc, tgt_acc, probe)
    for name in ("L_D", "L_G"):
        _check_finite(getattr(rec, name), name)
    return rec


@dataclass
class TrainResult:
    log: list
    state: OptimizerState
    freeze_audit: list = field(default_factory=list)


def train(model, corpus, config, state=None):
    """Alternate discriminator and generator phases for ``config.epochs`` epochs.

    One epoch is ceil(N_labeled / batch_size) alternation rounds; each round
    runs ``disc_steps`` discriminator phases then ``gen_steps`` generator
    phases.  Row 0 of the log holds the metrics of the initial model.
    """
    state = state or OptimizerState()
    view = corpus.training_view()
    if not view.source_train:
        raise DataError("training needs labeled source documents")
    w = config.weights
    half = max(1, config.batch_size // 2)
    labeled = BatchStream(view.source_train, config.batch_size, config.rng(_LABELED))
    dom_src = BatchStream(view.source_all, half, config.rng(_DOMAIN_SRC))
    dom_tgt = BatchStream(view.target_unlabeled, config.batch_size - half, config.rng(_DOMAIN_TGT))
    target = BatchStream(view.target_unlabeled, config.batch_size, config.rng(_TARGET))
    dropout_rng = config.rng(_DROPOUT)
    audit = [] if config.check_freezing else None

    records = [epoch_metrics(model, corpus, view, config, 0)]
    rounds = len(labeled)
    for epoch in range(1, config.epochs + 1):
        for _ in range(rounds):
            for _ in range(config.disc_steps):
                domain_batch = dom_src.next() + dom_tgt.next() if w.lambda_D > 0 else []
                train_discriminator_phase(model, labeled.next(), domain_batch, config, state,
                                          dropout_rng, audit)
            for _ in range(config.gen_steps):
                target_batch = target.next() if (w.lambda_G1 > 0 or w.lambda_G2 > 0) else []
                train_generator_phase(model, labeled.next(), target_batch, config, state,
                                      dropout_rng, audit)
        rec = epoch_metrics(model, corpus, view, config, epoch)
        log.info(rec.tsv())
        records.append(rec)
    return TrainResult(records, state, audit or [])


# --- checkpoints ----------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _shape_str(shape):
    return "x".join(str(n) for n in shape)


def _write_block(lines, kind, name, values):
    lines.append(f"{kind} {name} {_shape_str(values.shape)}")
    rows = values.reshape(1, -1) if values.ndim < 2 else values.reshape(values.shape[0], -1)
    for row in rows:
        lines.append(" ".join(_fmt(v) for v in row))


def _config_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def dumps_checkpoint(model, config, state=None):
    lines = [CKPT_HEADER]
    for f in dataclasses.fields(config):
        lines.append(f"config {f.name} {_config_value(getattr(config, f.name))}")
    for p in model.parameters():
        _write_block(lines, "param", p.name, p.values)
    if state is not None:
        for p in model.parameters():
            if p.name in state.mean_square:
                _write_block(lines, "opt", p.name, state.mean_square[p.name])
    return "\n".join(lines) + "\n"


def save_checkpoint(path, model, config, state=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_checkpoint(model, config, state))


def _parse_config(items):
    kwargs = {}
    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    for name, text in items:
        if name not in defaults:
            raise DataError(f"checkpoint: unknown config key {name!r}")
        default = defaults[name]
        if isinstance(default, bool):
            kwargs[name] = text == "True"
        elif isinstance(default, int):
            kwargs[name] = int(text)
        elif isinstance(default, float):
            kwargs[name] = float(text)
        elif isinstance(default, tuple):
            kwargs[name] = tuple(int(v) for v in text.split(",") if v)
        else:
            kwargs[name] = text
    return TrainConfig(**kwargs)


def loads_checkpoint(text):
    """Parse checkpoint text into (model, config, optimizer state)."""
    lines = text.splitlines()
    if not lines or lines[0] != CKPT_HEADER:
        raise DataError("not a HAGAN checkpoint (bad header)")
    config_items, blocks = [], {"param": {}, "opt": {}}
    i = 1
    while i < len(lines):
        parts = lines[i].split(" ")
        if parts[0] == "config" and len(parts) == 3:
            config_items.append((parts[1], parts[2]))
            i += 1
        elif parts[0] in blocks and len(parts) == 3:
            shape = tuple(int(n) for n in parts[2].split("x"))
            nrows = shape[0] if len(shape) == 2 else 1
            rows = lines[i + 1:i + 1 + nrows]
            if len(rows) != nrows:
                raise DataError(f"checkpoint line {i + 1}: truncated block {parts[1]}")
            flat = [float(v) for row in rows for v in row.split(" ")]
            if len(flat) != math.prod(shape):
                raise DataError(f"checkpoint line {i + 1}: block {parts[1]} has wrong size")
            blocks[parts[0]][parts[1]] = np.array(flat, dtype=np.float64).reshape(shape)
            i += 1 + nrows
        else:
            raise DataError(f"checkpoint line {i + 1}: unrecognised record")
    config = _parse_config(config_items)
    emb = blocks["param"].get("gen.embedding")
    if emb is None:
        raise DataError("checkpoint has no embedding block")
    model = build_model(config, emb.shape[0])
    for p in model.parameters():
        if p.name not in blocks["param"]:
            raise DataError(f"checkpoint is missing parameter {p.name}")
        values = blocks["param"][p.name]
        if values.shape != p.shape:
            raise DataError(f"checkpoint parameter {p.name} has shape {values.shape}, expected {p.shape}")
        p.values[...] = values
    state = OptimizerState({k: v.copy() for k, v in blocks["opt"].items()})
    return model, config, state


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return loads_checkpoint(fh.read())
