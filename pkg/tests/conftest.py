import pytest

from pairsieve.corpus import CorpusSpec, generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """A small tagged corpus shared by training-loop tests."""
    return generate_corpus(CorpusSpec(n_train=30, n_test=8, d=8, k=12, seed=3))
