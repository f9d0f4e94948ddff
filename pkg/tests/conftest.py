import pytest

from bppsim.config import ExperimentConfig, ExperimentShape, RlConfig
from bppsim.network import TopologyConfig
from bppsim.protocol import ProtocolConfig


def small_config(**overrides) -> ExperimentConfig:
    """A 12-node, 20-second setup that runs in milliseconds."""
    kw = dict(
        topology=TopologyConfig(nodes_per_region=4, miner_fraction=0.5),
        protocol=ProtocolConfig(forging_interval_s=6.0, tx_rate_per_s=4.0),
        experiment=ExperimentShape(pairs=4, duration_s=20.0, root_seed=7),
        rl=RlConfig(hidden_scorer=8, hidden_value=8),
    )
    kw.update(overrides)
    return ExperimentConfig(**kw)


@pytest.fixture
def small_cfg() -> ExperimentConfig:
    return small_config()
