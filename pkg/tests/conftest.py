import pytest

from stablereg.config import LinkModel, ScenarioConfig
from stablereg.core import QuorumConfig, Variant


def make_scenario(variant=Variant.CASSS, n=5, f=1, k=None, n_clients=3,
                  n_writers=2, n_readers=1, seed=1, loss=0.0, dup=0.0,
                  reorder=0.0, **kw) -> ScenarioConfig:
    if k is None:
        k = max(1, n - 2 * f) if variant is not Variant.MWABD else 1
    quorum = QuorumConfig(tuple(f"s{i}" for i in range(n)), f=f, k=k,
                          variant=variant, n_clients=max(n_clients, 8))
    link = LinkModel(loss_prob=loss, dup_prob=dup, reorder_prob=reorder)
    return ScenarioConfig(quorum=quorum, seed=seed, n_writers=n_writers,
                          n_readers=n_readers, link=link, **kw)


@pytest.fixture
def casss_scenario():
    return make_scenario(Variant.CASSS)
