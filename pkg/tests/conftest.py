from __future__ import annotations

import pytest

from noteprobe import corpus


@pytest.fixture(scope="session")
def small_corpus() -> corpus.Corpus:
    return corpus.generate_synthetic_corpus(11, 200)


@pytest.fixture(scope="session")
def property_corpus() -> corpus.Corpus:
    """1,000 notes shared by the perturbation property suites."""
    return corpus.generate_synthetic_corpus(20260809, 1000)


@pytest.fixture(scope="session")
def big_labeled_corpus() -> corpus.Corpus:
    """10,000 notes with gender-conditional label rates for baseline oracles."""
    profile = corpus.SyntheticProfile(
        label_rates={
            "htn": {"default": 0.2, "female": 0.6},
            "mortality": {"default": 0.25},
        }
    )
    return corpus.generate_synthetic_corpus(99, 10000, profile)
