import numpy as np
import pytest

from deepbow import model as M
from deepbow.vocab import build_vocabulary

CORPUS = [
    "red dress silk",
    "blue dress cotton",
    "red shoe leather",
    "silk scarf red",
    "cotton shirt blue",
    "leather bag brown",
]


@pytest.fixture
def small_vocab():
    return build_vocabulary(CORPUS, v=10, B=40, ngram_order=2)


@pytest.fixture
def tiny_model(small_vocab):
    cfg = M.ModelConfig(n_tokens=small_vocab.size, d=8, layers=2, heads=2, ffn=16, max_len=32, seed=3)
    return cfg, M.init_params(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_deepbow(small_vocab, tiny_model):
    from deepbow.inference import DeepBoW
    cfg, params = tiny_model
    return DeepBoW(params, cfg, small_vocab, "tinyhash")


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
