import numpy as np
import pytest
from hypothesis import settings

from drp.backbones import BackboneConfig
from drp.data import Dataset, SessionExample
from drp.encoding import FeatureSpec
from drp.synthworld import WorldConfig, generate_world

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

SMALL_WORLD = dict(n_users=40, n_queries=60, n_items=300, n_interactions=2000, session_length=10)


@pytest.fixture
def small_spec():
    return FeatureSpec(n_users=6, n_queries=5, n_items=12, dim=8)


@pytest.fixture
def small_backbone():
    return BackboneConfig(hidden=32, units=(64, 32, 1))


def random_batch(spec: FeatureSpec, n: int, seed: int = 0) -> Dataset:
    """Random in-vocabulary impressions with histories of varying length (including empty)."""
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        h = rng.integers(0, spec.n_items, size=rng.integers(0, 6)).tolist()
        examples.append(SessionExample(
            user_id=int(rng.integers(spec.n_users)), query_id=int(rng.integers(spec.n_queries)),
            item_id=int(rng.integers(spec.n_items)), history=tuple(h), label=int(i % 2),
            timestamp=i, session_id=i // 4))
    return Dataset.from_examples(examples)


@pytest.fixture(scope="session")
def small_world():
    cfg = WorldConfig(**SMALL_WORLD, seed=3)
    return cfg, generate_world(cfg)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
