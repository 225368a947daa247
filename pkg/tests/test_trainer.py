import dataclasses

import numpy as np
import pytest

from hagan import autodiff as ad
from hagan import trainer as tr
from hagan.autodiff import Parameter, Tape
from hagan.corpus import make_batches
from hagan.discriminator import discriminate, domain_dist, sentiment_dist
from hagan.errors import ConfigError, DivergenceError, FreezeViolation, UsageError
from hagan.generator import encode_document
from hagan.losses import (
    LossWeights,
    discriminator_loss,
    domain_confusion_loss,
    domain_loss,
    entropy_loss,
    generator_loss,
    sentiment_loss,
)
from hagan.trainer import (
    OptimizerState,
    TrainConfig,
    build_model,
    dumps_checkpoint,
    evaluate,
    load_checkpoint,
    loads_checkpoint,
    params_hash,
    rmsprop_step,
    save_checkpoint,
    train,
    train_discriminator_phase,
    train_generator_phase,
)


# --- optimizer ------------------------------------------------------------------

def _one_param(grad, value=0.0):
    p = Parameter("w", np.array([value]))
    p.grad[...] = grad
    return p


def test_rmsprop_single_step_closed_form():
    cfg, state = TrainConfig(), OptimizerState()
    p = _one_param(1.0)
    rmsprop_step([p], state, cfg)
    assert state.mean_square["w"][0] == pytest.approx(0.1, abs=1e-15)
    assert p.values[0] == pytest.approx(-0.0015811, abs=1e-7)
    assert p.grad[0] == 0.0


def test_rmsprop_two_steps_closed_form():
    cfg, state = TrainConfig(), OptimizerState()
    p = _one_param(1.0)
    rmsprop_step([p], state, cfg)
    first = p.values[0]
    p.grad[...] = 1.0
    rmsprop_step([p], state, cfg)
    assert state.mean_square["w"][0] == pytest.approx(0.19, abs=1e-15)
    assert p.values[0] - first == pytest.approx(-0.0011471, abs=1e-7)


def test_rmsprop_zero_gradient_decays_state():
    cfg, state = TrainConfig(), OptimizerState({"w": np.array([0.5])})
    p = _one_param(0.0, value=2.0)
    rmsprop_step([p], state, cfg)
    assert p.values[0] == 2.0
    assert state.mean_square["w"][0] == pytest.approx(0.45)


def test_rmsprop_nan_names_parameter():
    p, q = _one_param(0.5), Parameter("gen.bad", np.zeros(2))
    q.grad[...] = [0.0, np.nan]
    with pytest.raises(DivergenceError, match="gen.bad"):
        rmsprop_step([p, q], OptimizerState(), TrainConfig())
    assert p.values[0] == 0.0  # the whole step is aborted


@pytest.mark.parametrize("kwargs", [{"batch_size": 0}, {"learning_rate": 0.0},
                                    {"keep_prob": 0.0}, {"keep_prob": 1.5}, {"lambda_D": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# --- phases ---------------------------------------------------------------------

def _eval_config(**kw):
    return TrainConfig(embed_dim=3, word_hidden=3, sent_hidden=2, disc_widths=(4, 3),
                       keep_prob=1.0, **kw)


def _oracle_p(model, docs):
    return np.stack([discriminate(encode_document(d.sentences, model.generator)[0],
                                  model.discriminator).values for d in docs])


def _toy_docs(tiny_synth):
    corpus, _ = tiny_synth
    view = corpus.training_view()
    return view.source_train[:4], view.source_unlabeled[:2] + view.target_unlabeled[:3], view.target_unlabeled[3:7]


def test_discriminator_phase_matches_composition(tiny_synth):
    corpus, _ = tiny_synth
    labeled, mixed, _ = _toy_docs(tiny_synth)
    cfg = _eval_config(lambda_D=0.7)
    model = build_model(cfg, len(corpus.vocab))
    p_lab, p_mix = _oracle_p(model, labeled), _oracle_p(model, mixed)
    want = discriminator_loss(
        sentiment_loss(sentiment_dist(p_lab), [d.sentiment for d in labeled]).item(),
        domain_loss(domain_dist(p_mix), [d.is_source for d in mixed]).item(), cfg.weights)
    got = train_discriminator_phase(model, labeled, mixed, cfg, OptimizerState())
    assert got == pytest.approx(want, abs=1e-12)


def test_generator_phase_matches_composition(tiny_synth):
    corpus, _ = tiny_synth
    labeled, _, target = _toy_docs(tiny_synth)
    cfg = _eval_config()
    model = build_model(cfg, len(corpus.vocab))
    p_lab, p_tgt = _oracle_p(model, labeled), _oracle_p(model, target)
    want = generator_loss(
        sentiment_loss(sentiment_dist(p_lab), [d.sentiment for d in labeled]).item(),
        domain_confusion_loss(domain_dist(p_tgt)).item(),
        entropy_loss(sentiment_dist(p_tgt)).item(), cfg.weights)
    got = train_generator_phase(model, labeled, target, cfg, OptimizerState())
    assert got == pytest.approx(want, abs=1e-12)


def test_phases_freeze_the_other_network(tiny_synth):
    corpus, _ = tiny_synth
    labeled, mixed, target = _toy_docs(tiny_synth)
    cfg = _eval_config(check_freezing=True)
    model = build_model(cfg, len(corpus.vocab))
    state, audit = OptimizerState(), []
    gen, disc = model.generator.parameters(), model.discriminator.parameters()

    g0, d0 = params_hash(gen), params_hash(disc)
    train_discriminator_phase(model, labeled, mixed, cfg, state, audit=audit)
    assert params_hash(gen) == g0 and params_hash(disc) != d0

    g1, d1 = params_hash(gen), params_hash(disc)
    train_generator_phase(model, labeled, target, cfg, state, audit=audit)
    assert params_hash(disc) == d1 and params_hash(gen) != g1
    assert [a[0] for a in audit] == ["discriminator", "generator"]
    assert all(before == after for _, before, after in audit)
    # frozen parameters get their trainable flag back afterwards
    assert all(p.trainable for p in model.parameters())


def test_freeze_violation_is_detected(tiny_synth, monkeypatch):
    corpus, _ = tiny_synth
    labeled, mixed, _ = _toy_docs(tiny_synth)
    cfg = _eval_config(check_freezing=True)
    model = build_model(cfg, len(corpus.vocab))
    real_step = tr.rmsprop_step

    def leaky_step(params, state, config):
        real_step(params, state, config)
        model.generator.embedding.values[0, 0] += 1.0

    monkeypatch.setattr(tr, "rmsprop_step", leaky_step)
    with pytest.raises(FreezeViolation, match="discriminator"):
        train_discriminator_phase(model, labeled, mixed, cfg, OptimizerState())


def test_naive_discriminator_phase_is_pure_sentiment(tiny_synth):
    corpus, _ = tiny_synth
    labeled, mixed, _ = _toy_docs(tiny_synth)
    cfg = _eval_config().naive()
    a = build_model(cfg, len(corpus.vocab))
    b = build_model(cfg, len(corpus.vocab))
    la = train_discriminator_phase(a, labeled, mixed, cfg, OptimizerState())
    lb = train_discriminator_phase(b, labeled, [], cfg, OptimizerState())
    assert la == lb
    assert params_hash(a.parameters()) == params_hash(b.parameters())


def test_generator_phase_rejects_source_in_target_batch(tiny_synth):
    corpus, _ = tiny_synth
    labeled, _, _ = _toy_docs(tiny_synth)
    cfg = _eval_config()
    model = build_model(cfg, len(corpus.vocab))
    with pytest.raises(UsageError):
        train_generator_phase(model, labeled, labeled[:1], cfg, OptimizerState())


def test_full_stack_gradient_check(tiny_synth):
    corpus, _ = tiny_synth
    labeled, mixed, target = _toy_docs(tiny_synth)
    cfg = _eval_config()
    model = build_model(cfg, len(corpus.vocab))
    docs = labeled[:2] + target[:2]

    def f():
        d = ad.stack([encode_document(x.sentences, model.generator)[0] for x in docs])
        p = discriminate(d, model.discriminator)
        w = LossWeights()
        l_d = discriminator_loss(sentiment_loss(sentiment_dist(p[:2]), [x.sentiment for x in docs[:2]]),
                                 domain_loss(domain_dist(p), [1, 1, 0, 0]), w)
        l_g = generator_loss(sentiment_loss(sentiment_dist(p[:2]), [x.sentiment for x in docs[:2]]),
                             domain_confusion_loss(domain_dist(p[2:])),
                             entropy_loss(sentiment_dist(p[2:])), w)
        return ad.add(l_d, l_g)

    assert ad.grad_check(f, model.parameters()) < 1e-3


# --- evaluation -----------------------------------------------------------------

def _fixed_predictions(monkeypatch, probs):
    monkeypatch.setattr(tr, "predict_proba", lambda model, docs: np.asarray(probs, dtype=float))


def test_evaluate_counts(monkeypatch, tiny_synth, small_model):
    corpus, _ = tiny_synth
    docs = [dataclasses.replace(d, sentiment=y) for d, y in zip(corpus.source_test, [1, 1, 0, 0])]
    _fixed_predictions(monkeypatch, [[0.7, 0.2, 0.1], [0.5, 0.1, 0.4], [0.1, 0.6, 0.3], [0.6, 0.3, 0.1]])
    assert evaluate(small_model, docs) == 0.75
    _fixed_predictions(monkeypatch, [[0.7, 0.2, 0.1], [0.5, 0.1, 0.4], [0.1, 0.6, 0.3], [0.3, 0.6, 0.1]])
    assert evaluate(small_model, docs) == 1.0


def test_evaluate_tie_goes_to_positive(monkeypatch, tiny_synth, small_model):
    corpus, _ = tiny_synth
    docs = [dataclasses.replace(corpus.source_test[0], sentiment=1)]
    _fixed_predictions(monkeypatch, [[0.4, 0.4, 0.2]])
    assert evaluate(small_model, docs) == 1.0


def test_evaluate_empty(small_model):
    with pytest.raises(UsageError):
        evaluate(small_model, [])


def test_evaluate_uses_no_dropout(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    model = build_model(tiny_config, len(corpus.vocab))
    assert evaluate(model, corpus.target_test) == evaluate(model, corpus.target_test)


# --- training -------------------------------------------------------------------

def test_zero_epochs_returns_initial_metrics(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    cfg = dataclasses.replace(tiny_config, epochs=0)
    model = build_model(cfg, len(corpus.vocab))
    before = params_hash(model.parameters())
    result = train(model, corpus, cfg)
    assert len(result.log) == 1 and result.log[0].epoch == 0
    assert params_hash(model.parameters()) == before


def test_training_is_deterministic(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    texts = []
    for _ in range(2):
        model = build_model(tiny_config, len(corpus.vocab))
        result = train(model, corpus, tiny_config)
        texts.append((tr.format_log(result.log), dumps_checkpoint(model, tiny_config, result.state)))
    assert texts[0] == texts[1]


def test_training_log_shape(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    model = build_model(tiny_config, len(corpus.vocab))
    log = train(model, corpus, tiny_config).log
    assert [r.epoch for r in log] == [0, 1, 2]
    for r in log:
        fields = r.tsv().split("\t")
        assert len(fields) == 6
        assert 0 <= r.src_acc <= 1 and 0 <= r.tgt_acc <= 1 and 0 <= r.domain_probe_acc <= 1


def test_freeze_audit_over_a_run(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    cfg = dataclasses.replace(tiny_config, check_freezing=True, disc_steps=2)
    model = build_model(cfg, len(corpus.vocab))
    audit = train(model, corpus, cfg).freeze_audit
    rounds = 4  # 40 labeled docs / batch 10
    assert len(audit) == cfg.epochs * rounds * 3
    assert all(before == after for _, before, after in audit)


def test_naive_run_ignores_target_documents(tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    cfg = tiny_config.naive()
    bare = dataclasses.replace(corpus, target_unlabeled=[], source_unlabeled=[])
    a, b = build_model(cfg, len(corpus.vocab)), build_model(cfg, len(corpus.vocab))
    train(a, corpus, cfg)
    train(b, bare, cfg)
    assert params_hash(a.generator.parameters()) == params_hash(b.generator.parameters())


def test_naive_run_matches_standalone_supervised_loop(tiny_synth, tiny_config):
    """Plain HAN classifier trained step by step without train()."""
    corpus, _ = tiny_synth
    cfg = tiny_config.naive()
    model = build_model(cfg, len(corpus.vocab))
    train(model, corpus, cfg)

    ref = build_model(cfg, len(corpus.vocab))
    gen, disc = ref.generator.parameters(), ref.discriminator.parameters()
    state = OptimizerState()
    order_rng, drop_rng = cfg.rng(1), cfg.rng(5)
    view = corpus.training_view()
    batches = []
    for _ in range(cfg.epochs):
        while len(batches) < 2 * 4:
            batches += make_batches(view.source_train, cfg.batch_size, order_rng)
        for _ in range(4):
            for active, frozen in ((disc, gen), (gen, disc)):
                docs = batches.pop(0)
                for p in frozen:
                    p.trainable = False
                for p in active:
                    p.zero_grad()
                with Tape() as tape:
                    d = ad.stack([encode_document(x.sentences, ref.generator)[0] for x in docs])
                    p = discriminate(d, ref.discriminator, training=True, rng=drop_rng)
                    loss = sentiment_loss(sentiment_dist(p), [x.sentiment for x in docs])
                tape.backward(loss)
                rmsprop_step(active, state, cfg)
                for p in frozen:
                    p.trainable = True
    for got, want in zip(model.generator.parameters(), gen):
        np.testing.assert_allclose(got.values, want.values, rtol=0, atol=1e-12)


# --- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, tiny_synth, tiny_config):
    corpus, _ = tiny_synth
    model = build_model(tiny_config, len(corpus.vocab))
    result = train(model, corpus, tiny_config)
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    save_checkpoint(first, model, tiny_config, result.state)
    loaded, cfg, state = load_checkpoint(first)
    save_checkpoint(second, loaded, cfg, state)
    assert first.read_bytes() == second.read_bytes()
    assert cfg == tiny_config
    assert evaluate(model, corpus.target_test) == evaluate(loaded, corpus.target_test)
    np.testing.assert_array_equal(tr.predict_proba(model, corpus.target_test),
                                  tr.predict_proba(loaded, corpus.target_test))


def test_checkpoint_format(small_model):
    text = dumps_checkpoint(small_model, TrainConfig())
    lines = text.splitlines()
    assert lines[0] == "HAGAN-CKPT v1"
    i = lines.index("param gen.embedding 7x3")
    assert len(lines[i + 1].split(" ")) == 3


def test_checkpoint_errors(small_model):
    from hagan.errors import DataError
    with pytest.raises(DataError, match="header"):
        loads_checkpoint("nope\n")
    text = dumps_checkpoint(small_model, TrainConfig(embed_dim=3, word_hidden=3, sent_hidden=2,
                                                     disc_widths=(4, 3)))
    with pytest.raises(DataError):
        loads_checkpoint(text.rsplit("\n", 2)[0] + "\n")
