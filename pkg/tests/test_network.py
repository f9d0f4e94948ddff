import numpy as np
import pytest

from bppsim.engine import derive_stream
from bppsim.network import (
    ConfigurationError,
    LatencyModel,
    TopologyConfig,
    build_topology,
    min_one_hop_delay,
    sample_latency,
    transmission_delay,
)


def make_model(**kw):
    return LatencyModel(**kw)


def test_default_topology_shape():
    topo = build_topology(TopologyConfig(), derive_stream(1, "net/topology"))
    assert topo.n_nodes == 150
    assert len(topo.miners) == 75
    assert all(len(adj) == 149 for adj in topo.adjacency)
    per_region = {}
    for n in topo.nodes:
        per_region.setdefault(n.region, []).append(n)
    assert set(per_region) == {"Ohio", "Tokyo", "Ireland"}
    for nodes in per_region.values():
        assert len(nodes) == 50
        assert sum(n.is_miner for n in nodes) == 25


def test_small_topology_counts():
    cfg = TopologyConfig(nodes_per_region=2, miner_fraction=0.5)
    topo = build_topology(cfg, derive_stream(1, "t"))
    assert topo.n_nodes == 6
    assert len(topo.miners) == 3


def test_topology_deterministic():
    cfg = TopologyConfig(nodes_per_region=5)
    a = build_topology(cfg, derive_stream(9, "t"))
    b = build_topology(cfg, derive_stream(9, "t"))
    assert a.adjacency == b.adjacency
    assert a.nodes == b.nodes
    c = build_topology(cfg, derive_stream(10, "t"))
    assert a.adjacency != c.adjacency


def test_adjacency_symmetric_and_complete():
    topo = build_topology(TopologyConfig(nodes_per_region=4), derive_stream(3, "t"))
    n = topo.n_nodes
    for i, neighbors in enumerate(topo.adjacency):
        assert i not in neighbors
        assert len(set(neighbors)) == n - 1
        for j in neighbors:
            assert i in topo.adjacency[j]


def test_degree_limited_topology():
    cfg = TopologyConfig(nodes_per_region=6, degree=4)
    topo = build_topology(cfg, derive_stream(5, "t"))
    for i, neighbors in enumerate(topo.adjacency):
        assert len(neighbors) == 4
        for j in neighbors:
            assert i in topo.adjacency[j]


def test_hash_rate_shares_sum_to_one():
    topo = build_topology(TopologyConfig(), derive_stream(2, "t"))
    assert abs(sum(n.hash_rate_share for n in topo.nodes) - 1.0) < 1e-12


def test_bad_configs_rejected():
    with pytest.raises(ConfigurationError):
        build_topology(TopologyConfig(nodes_per_region=1), derive_stream(0, "t"))
    with pytest.raises(ConfigurationError):
        build_topology(TopologyConfig(miner_fraction=0.0), derive_stream(0, "t"))
    with pytest.raises(ConfigurationError):
        build_topology(TopologyConfig(nodes_per_region=4, degree=3), derive_stream(0, "t"))


def test_latency_degenerate_jitter():
    model = make_model(jitter_sigma=0.0)
    rng = derive_stream(1, "lat")
    for _ in range(5):
        assert sample_latency(model, "Ohio", "Ohio", rng) == 0.020


def test_latency_positive():
    model = make_model(jitter_sigma=0.25)
    rng = derive_stream(1, "lat")
    draws = [sample_latency(model, "Ohio", "Tokyo", rng) for _ in range(1000)]
    assert all(d > 0 for d in draws)


def test_latency_lognormal_mean():
    # Log-normal moment identity: E[base * exp(sigma Z)] = base * exp(sigma^2 / 2).
    sigma = 0.25
    model = make_model(jitter_sigma=sigma)
    rng = derive_stream(7, "lat")
    n = 100_000
    draws = np.array([sample_latency(model, "Ohio", "Ireland", rng) for _ in range(n)])
    expected = 0.080 * np.exp(sigma**2 / 2.0)
    assert abs(draws.mean() - expected) / expected < 0.01


def test_latency_unknown_pair():
    model = make_model()
    with pytest.raises(ConfigurationError):
        sample_latency(model, "Ohio", "Mars", derive_stream(0, "l"))


def test_latency_asymmetric_matrix_rejected():
    with pytest.raises(ConfigurationError):
        LatencyModel(base_ms={("A", "A"): 10.0, ("A", "B"): 50.0, ("B", "A"): 60.0,
                              ("B", "B"): 10.0})


def test_transmission_delay_latency_only():
    model = make_model()
    assert transmission_delay(model, 0.0, 0.1) == 0.1


def test_transmission_delay_reference_value():
    model = make_model(bandwidth_Bps=1.25e6, t_proc_s=0.0)
    got = transmission_delay(model, 154363.0, 0.05)
    assert abs(got - (0.05 + 154363.0 / 1.25e6)) < 1e-15
    assert abs(got - 0.1734904) < 1e-6


def test_transmission_delay_linear_in_size():
    model = make_model(bandwidth_Bps=2e6, t_proc_s=1e-7)
    one = transmission_delay(model, 1000.0, 0.0)
    two = transmission_delay(model, 2000.0, 0.0)
    assert abs(two - 2 * one) < 1e-15


def test_transmission_delay_affine():
    rng = np.random.default_rng(11)
    model = make_model(bandwidth_Bps=3.3e6, t_proc_s=2.5e-8)
    for _ in range(50):
        size = float(rng.uniform(0, 1e6))
        lat = float(rng.uniform(0, 0.5))
        expect = lat + size * (1.0 / 3.3e6 + 2.5e-8)
        assert abs(transmission_delay(model, size, lat) - expect) <= 1e-12 * max(expect, 1.0)


def test_transmission_delay_per_block_mode():
    model = make_model(bandwidth_Bps=1e6, t_proc_s=0.01, t_proc_mode="per_block")
    assert transmission_delay(model, 1e6, 0.1) == pytest.approx(0.1 + 1.0 + 0.01)


def test_min_one_hop_delay_is_lower_bound():
    model = make_model()
    rng = derive_stream(13, "lat")
    bound = min_one_hop_delay(model)
    draws = [sample_latency(model, "Ohio", "Ohio", rng) for _ in range(20000)]
    assert min(draws) >= bound
