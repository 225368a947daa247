import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hagan.generator import GeneratorParams  # noqa: E402
from hagan.trainer import TrainConfig, build_model  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


def random_generator(seed, vocab=7, embed=3, word_hidden=3, sent_hidden=2, scale=0.5):
    rng = np.random.default_rng(seed)
    params = GeneratorParams.init(vocab, embed, word_hidden, sent_hidden, rng)
    for p in params.parameters():
        p.values[...] = rng.uniform(-scale, scale, p.shape)
    return params


@pytest.fixture
def small_model():
    cfg = TrainConfig(embed_dim=3, word_hidden=3, sent_hidden=2, disc_widths=(4, 3), seed=3)
    model = build_model(cfg, 7)
    rng = np.random.default_rng(11)
    for p in model.parameters():
        p.values[...] = rng.uniform(-0.5, 0.5, p.shape)
    return model


@pytest.fixture(scope="session")
def tiny_synth():
    from hagan.corpus import SynthConfig, generate_synthetic
    cfg = SynthConfig(source_labeled=40, source_test=10, source_unlabeled=30, target_unlabeled=30,
                      target_test=20, sentences_per_doc=(2, 3), words_per_sentence=(3, 5), seed=5)
    return generate_synthetic(cfg)


@pytest.fixture
def tiny_config():
    return TrainConfig(embed_dim=4, word_hidden=4, sent_hidden=3, disc_widths=(6,), batch_size=10,
                       learning_rate=0.005, epochs=2, seed=1)
