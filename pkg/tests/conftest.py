import numpy as np
import pytest

from mtst.data import Sample, SynthConfig, generate_synthetic
from mtst.encoder import EncoderConfig
from mtst.features import DEFAULT_LEXICON, width
from mtst.model import Batch, FusionConfig, ModelConfig, init_model
from mtst.tokenizer import train_vocab
from mtst.trainer import Featurizer


def make_batch(rng, B=4, n_max=8, vocab_size=40, C=3, K=3, F=4, lengths=(8, 5, 3, 6)):
    ids = np.zeros((B, n_max), np.int64)
    mask = np.zeros((B, n_max), np.int64)
    for i, n in enumerate(lengths[:B]):
        ids[i, :n] = rng.integers(4, vocab_size, n)
        mask[i, :n] = 1
    return Batch(ids, mask, rng.random((B, F)), rng.integers(0, 2, (B, C)).astype(float),
                 np.array([1, 1, 0, 1], bool)[:B], rng.integers(0, K, B),
                 np.array([1, 0, 1, 1], bool)[:B])


@pytest.fixture
def tiny_config():
    return ModelConfig(EncoderConfig(layers=2, hidden=16, heads=2, vocab_size=40, n_max=8,
                                     dropout_p=0.1),
                       FusionConfig(feature_dense_dim=5), n_multi=3, n_main=3, n_features=4)


@pytest.fixture
def tiny_params(tiny_config):
    # larger-than-init weights so no gradient is vanishingly small
    params = init_model(tiny_config, 1)
    rng = np.random.default_rng(0)
    for k, v in params.values.items():
        params.values[k] = v + rng.normal(0.0, 0.3, v.shape)
    params.grads = {k: np.zeros_like(v) for k, v in params.values.items()}
    return params


@pytest.fixture
def tiny_batch():
    return make_batch(np.random.default_rng(3))


@pytest.fixture(scope="session")
def small_split():
    return generate_synthetic(SynthConfig(n_samples=300, labeled_fraction=0.3), seed=0)


@pytest.fixture(scope="session")
def small_setup(small_split):
    """Vocabulary, featurizer and a small model config over the small synthetic split."""
    vocab = train_vocab([s.text for s in small_split.labeled + small_split.unlabeled], 400)
    fz = Featurizer(vocab, DEFAULT_LEXICON, 24, 3)
    mc = ModelConfig(EncoderConfig(layers=1, hidden=16, heads=2, vocab_size=vocab.size, n_max=24),
                     FusionConfig(feature_dense_dim=4), 3, 3, width(DEFAULT_LEXICON))
    return vocab, fz, mc


# --- acceptance summary -----------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
