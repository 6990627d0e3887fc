import numpy as np
import pytest

from alulab.data import gen_synthetic
from alulab.experiment import ExperimentConfig, attack_test_set, prepare
from alulab.models import VAE, LogitClassifier


@pytest.fixture(scope="session")
def small():
    """Quick 3-class problem with a trained classifier and VAE."""
    train = gen_synthetic(3, 8, 300, 0.6, seed=11)
    test = gen_synthetic(3, 8, 150, 0.6, seed=11, split="test")
    c = LogitClassifier(hidden=(32,), epochs=20, seed=0).fit(train.features, train.labels)
    v = VAE(latent_dim=4, hidden=32, epochs=30, kl_weight=1e-5, seed=0).fit(train.features)
    return {"train": train, "test": test, "c": c, "v": v}


@pytest.fixture(scope="session")
def bench():
    """Default desk-scale benchmark at seed 0, trained once, plus its PGD-20 test set."""
    cfg = ExperimentConfig()
    art = prepare(cfg)
    adv, acfg = attack_test_set(cfg, art)
    return {"cfg": cfg, "art": art, "adv": adv, "acfg": acfg}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
