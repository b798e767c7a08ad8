import numpy as np
import pytest

from querydistill.teacher_cache import SyntheticTeacherSpec, generate_synthetic_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small corpus shared by fast tests; heavyweight runs build their own."""
    spec = SyntheticTeacherSpec(
        dim=16,
        num_topics=4,
        num_docs=32,
        num_train_queries=96,
        num_heldout_queries=24,
        doc_spread=0.2,
        query_noise=0.1,
        seed=3,
    )
    return generate_synthetic_corpus(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
