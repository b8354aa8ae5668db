import os

import pytest
from hypothesis import settings

from dualwaf.corpus import generate_corpus
from dualwaf.pipeline import save_bundle
from dualwaf.training import TrainConfig, train

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def corpus42():
    return generate_corpus(2000, 42)


@pytest.fixture(scope="session")
def trained42(corpus42):
    return train(corpus42, corpus42, TrainConfig(seed=42, kfold=10))


@pytest.fixture(scope="session")
def bundle42(trained42):
    return trained42.bundle


@pytest.fixture(scope="session")
def bundle_path(bundle42, tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "model.json"
    save_bundle(bundle42, path)
    return str(path)


@pytest.fixture(scope="session")
def small_bundle_path(tmp_path_factory):
    """A quick bundle from a 300-record corpus, for CLI and proxy plumbing tests."""
    recs = generate_corpus(300, 7)
    res = train(recs, recs, TrainConfig(seed=7, ngram=(1, 2)))
    path = tmp_path_factory.mktemp("small") / "small.json"
    save_bundle(res.bundle, path)
    return str(path)


def pytest_configure(config):
    os.environ.setdefault("SOURCE_DATE_EPOCH", "0")


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.LINES):
        terminalreporter.write_line(acceptance_log.LINES[n])
    missing = sorted(set(range(1, 11)) - set(acceptance_log.LINES))
    if missing:
        terminalreporter.write_line(f"not run: {missing}")
