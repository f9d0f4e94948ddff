"""Acceptance suite: one test per criterion, one printed verdict line each.

The two expensive criteria (null control, directional evaluation) run at the
documented scale by default; set BPPSIM_ACCEPT_FAST=1 to shrink them for
development runs. The directional criterion trains the default configuration
from scratch (deterministic) unless BPPSIM_ACCEPT_CHECKPOINT points at an
existing trained checkpoint produced with the same config.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from bppsim.bandit import greedy_success_rate, train_bandit
from bppsim.config import ExperimentConfig
from bppsim.engine import derive_stream, stable_seed
from bppsim.env import run_episode
from bppsim.metrics import (
    CarbonModel,
    PairedRun,
    carbon_estimate,
    summarize_experiment,
    wilcoxon_rank_sum,
)
from bppsim.network import LatencyModel, min_one_hop_delay, transmission_delay
from bppsim.policy import init_policy, load_policy
from bppsim.ppo import Hyperparams, gae_advantages
from bppsim.protocol import FULL_BLOCK, HASH_ANNOUNCE, Simulation
from bppsim.runner import evaluate_pairs
from bppsim.trainer import train

from conftest import small_config
from test_ppo import (
    numeric_grads,
    rand_batch,
    rand_params,
    unit_batch,
)
from bppsim.ppo import surrogate_objective

FAST = os.environ.get("BPPSIM_ACCEPT_FAST") == "1"
WORKERS = min(2, os.cpu_count() or 1)


def verdict(name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


# -- shared expensive fixtures ---------------------------------------------------


@pytest.fixture(scope="module")
def default_cfg() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture(scope="module")
def null_pairs(default_cfg):
    """k paired runs of an untrained (uniform-noise) policy vs the baseline."""
    k = 20 if FAST else 100
    params = init_policy(
        default_cfg.max_degree,
        derive_stream(default_cfg.experiment.root_seed, "init"),
        hidden_scorer=default_cfg.rl.hidden_scorer,
        hidden_value=default_cfg.rl.hidden_value,
        log_std_init=default_cfg.rl.log_std_init,
    )
    return evaluate_pairs(default_cfg, params, k, workers=WORKERS, stochastic=True)


@pytest.fixture(scope="module")
def trained_policy(default_cfg):
    ckpt = os.environ.get("BPPSIM_ACCEPT_CHECKPOINT")
    if ckpt:
        params, meta = load_policy(ckpt)
        if meta.get("config_digest") != default_cfg.digest():
            raise RuntimeError("BPPSIM_ACCEPT_CHECKPOINT trained under a different config")
        return params
    iterations = int(os.environ.get("BPPSIM_ACCEPT_TRAIN_ITERS", "8" if FAST else "150"))
    started = time.time()
    result = train(default_cfg, iterations=iterations, workers=WORKERS)
    assert time.time() - started < 2 * 3600, "training budget exceeded"
    return result.params


@pytest.fixture(scope="module")
def directional_pairs(default_cfg, trained_policy):
    k = 20 if FAST else 200
    return evaluate_pairs(default_cfg, trained_policy, k, workers=WORKERS,
                          stochastic=True)


# -- criteria ---------------------------------------------------------------------


def test_determinism_reports_and_digests():
    """Identical config+seed => byte-identical reports and event-log digests."""
    cfg = small_config()
    ok = True
    details = []
    for i in range(10):
        seed = stable_seed(2024, f"determinism/{i}")
        a = run_episode(cfg, seed, keep_log=True, track_digest=True)
        b = run_episode(cfg, seed, keep_log=True, track_digest=True)
        same = (a.report == b.report and a.digest == b.digest and a.log == b.log)
        ok = ok and same
        if not same:
            details.append(f"seed {seed} diverged")
    verdict("determinism", ok, "; ".join(details) or "10 seeds byte-identical")


def test_protocol_arithmetic_split():
    """N=149 connections: exactly 12 full blocks and 137 hash announcements."""
    cfg = ExperimentConfig()
    topo = cfg.build_topology(1)
    sim = Simulation(topo, cfg.latency_model(), cfg.protocol, 60.0, 1, keep_log=True)
    node = sim.nodes[0]
    assert len(node.connections) == 149
    sim.broadcast_block(node, sim.blocks[0])
    sends = [r for r in sim.log if r[0] == "send"]
    fulls = sum(1 for r in sends if r[2] == FULL_BLOCK)
    announces = sum(1 for r in sends if r[2] == HASH_ANNOUNCE)
    verdict("protocol-arithmetic", fulls == 12 and announces == 137,
            f"{fulls} full + {announces} announce")


def test_transmission_delay_formula():
    """delay = l + size*(1/b + t_proc) on 100 random inputs, 1e-12 relative."""
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        bw = float(rng.uniform(1e5, 1e8))
        tp = float(rng.uniform(0, 1e-6))
        model = LatencyModel(bandwidth_Bps=bw, t_proc_s=tp)
        size = float(rng.uniform(0, 1e7))
        lat = float(rng.uniform(0, 1.0))
        got = transmission_delay(model, size, lat)
        expect = lat + size * (1.0 / bw + tp)
        worst = max(worst, abs(got - expect) / max(abs(expect), 1e-300))
    verdict("t-bpp-formula", worst < 1e-12, f"max rel err {worst:.2e}")


def test_carbon_arithmetic():
    model = CarbonModel()
    per_msg = model.per_message_gco2
    ok1 = abs(per_msg - 154363 * 4.42e-09) < 1e-18
    ok2 = abs(per_msg - 6.8228e-04) < 1e-7
    phase = carbon_estimate(model, 485.125)
    ok3 = abs(phase - 0.331) <= 1e-3
    ok4 = abs(6.82e-04 * 485.125 - 0.331) <= 1e-3
    verdict("carbon-arithmetic", ok1 and ok2 and ok3 and ok4,
            f"per_msg={per_msg:.6e}, phase={phase:.6f}")


def test_statistics_oracle():
    """Statistic matches exact pair-count enumeration for all n+m <= 10; p
    matches an independent implementation of the documented normal
    approximation to 1e-9, and scipy's reference on 20 random n=50 pairs to
    1e-6."""
    rng = np.random.default_rng(17)
    worst_p = 0.0
    for n in range(1, 10):
        for m in range(1, 10):
            if n + m > 10:
                continue
            for _ in range(3):
                a = rng.integers(0, 5, size=n).astype(float)
                b = rng.integers(0, 5, size=m).astype(float)
                stat, p = wilcoxon_rank_sum(a, b)
                # exact statistic oracle: count (win + half-tie) pairs
                u_exact = sum(1.0 if x > y else (0.5 if x == y else 0.0)
                              for x in a for y in b)
                assert stat == pytest.approx(u_exact, abs=1e-12)
                # independent p oracle under the documented convention
                pooled = np.concatenate([a, b])
                ranks = stats.rankdata(pooled)
                u1 = float(np.sum(ranks[:n])) - n * (n + 1) / 2.0
                nn = n + m
                _, counts = np.unique(pooled, return_counts=True)
                tie = float(np.sum(counts.astype(float) ** 3 - counts))
                var = n * m / 12.0 * ((nn + 1) - tie / (nn * (nn - 1)))
                if var <= 0:
                    p_oracle = 1.0
                else:
                    z = (max(u1, n * m - u1) - n * m / 2.0 - 0.5) / math.sqrt(var)
                    p_oracle = min(1.0, 2.0 * float(stats.norm.sf(z)))
                worst_p = max(worst_p, abs(p - p_oracle))
    assert worst_p < 1e-9

    worst_ref = 0.0
    for _ in range(20):
        a = rng.normal(0, 1, size=50)
        b = rng.normal(0.3, 1.2, size=50)
        stat, p = wilcoxon_rank_sum(a, b)
        ref = stats.mannwhitneyu(a, b, alternative="two-sided",
                                 method="asymptotic", use_continuity=True)
        assert stat == ref.statistic
        worst_ref = max(worst_ref, abs(p - ref.pvalue))
    verdict("statistics-oracle", worst_ref < 1e-6,
            f"enum |dp|<={worst_p:.1e}, scipy |dp|<={worst_ref:.1e}")


def test_ppo_correctness():
    """Finite-difference gradient checks, clip unit cases, GAE brute force."""
    # gradients on 10 random parameter/batch draws
    worst = 0.0
    for draw in range(10):
        rng = np.random.default_rng(500 + draw)
        params = rand_params(rng)
        batch = rand_batch(rng, params)
        h = Hyperparams(value_coef=0.5, entropy_coef=0.01)
        idx = np.arange(len(batch))
        _, analytic, _ = surrogate_objective(params, batch, idx, h)
        numeric = numeric_grads(params, batch, idx, h)
        for name in analytic:
            a, nmr = analytic[name], numeric[name]
            denom = np.maximum(np.abs(a) + np.abs(nmr), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - nmr) / denom)))
    assert worst < 1e-4

    # clipped-surrogate unit cases
    from bppsim.policy import zeroed_policy
    h0 = Hyperparams(value_coef=0.0)
    params = zeroed_policy(3)
    loss_hi, _, _ = surrogate_objective(params, unit_batch(params, 2.0, 1.0),
                                        np.array([0]), h0)
    loss_lo, _, _ = surrogate_objective(params, unit_batch(params, 0.5, -1.0),
                                        np.array([0]), h0)
    assert loss_hi == pytest.approx(-1.2, abs=1e-12)
    assert loss_lo == pytest.approx(0.8, abs=1e-12)

    # GAE vs O(T^2) brute force
    rng = np.random.default_rng(1000)
    rewards = rng.normal(size=25)
    values = rng.normal(size=26)
    gamma, lam = 0.99, 0.95
    adv = gae_advantages(rewards, values, gamma, lam)
    deltas = rewards + gamma * values[1:] - values[:-1]
    brute = np.array([
        sum((gamma * lam) ** k * deltas[t + k] for k in range(len(rewards) - t))
        for t in range(len(rewards))
    ])
    gae_err = float(np.max(np.abs(adv - brute)))
    verdict("ppo-correctness", gae_err < 1e-12,
            f"grad rel err {worst:.1e}, clip exact, GAE err {gae_err:.1e}")


def test_rl_sanity_bandit():
    """5-neighbor ranking bandit: >=95% greedy success within 200 iterations."""
    started = time.time()
    params, _ = train_bandit(iterations=200, seed=0)
    rate = greedy_success_rate(params, seed=42, n_eval=200)
    elapsed = time.time() - started
    verdict("rl-sanity-bandit", rate >= 0.95 and elapsed < 300,
            f"success {rate:.3f} in {elapsed:.0f}s")


def test_null_control(null_pairs):
    """Untrained uniform-noise policy vs baseline: no spurious effect."""
    summary = summarize_experiment(null_pairs)
    ok = True
    details = []
    for name, m in summary.metrics.items():
        rel = (m.treated_mean - m.baseline_mean) / m.baseline_mean * 100.0
        details.append(f"{name}: rel {rel:+.2f}% p={m.p_value:.3f}")
        ok = ok and abs(rel) < 2.0 and m.p_value > 0.05
    verdict("null-control", ok, "; ".join(details))


def test_directional_reproduction(directional_pairs):
    """Trained policy beats the baseline in the expected direction: lower
    synchronization time and fewer messages per synchronized block, with
    rank-sum significance on at least one metric."""
    summary = summarize_experiment(directional_pairs)
    st = summary.metrics["sync_time_s"]
    ms = summary.metrics["msgs_per_sync_block"]
    better_means = st.treated_mean < st.baseline_mean and ms.treated_mean < ms.baseline_mean
    significant = st.p_value < 0.05 or ms.p_value < 0.05
    detail = (
        f"sync_time {st.baseline_mean:.4f}->{st.treated_mean:.4f} (p={st.p_value:.3g}); "
        f"msgs/sync {ms.baseline_mean:.1f}->{ms.treated_mean:.1f} (p={ms.p_value:.3g})"
    )
    verdict("directional-reproduction", better_means and significant, detail)


def test_metric_invariants(default_cfg, null_pairs, directional_pairs):
    """sync_rate in [0,1]; sync time >= one-hop lower bound; msgs/sync block
    >= threshold-count - 1, across every evaluation run above."""
    model = default_cfg.latency_model()
    bound = min_one_hop_delay(model)
    n_nodes = default_cfg.topology.nodes_per_region * len(default_cfg.topology.regions)
    threshold_count = math.ceil(default_cfg.experiment.sync_threshold * n_nodes)
    ok = True
    checked = 0
    for pair in itertools.chain(null_pairs, directional_pairs):
        for report in (pair.baseline, pair.treated):
            ok = ok and 0.0 <= report.sync_rate <= 1.0
            if report.sync_time_s is not None:
                ok = ok and report.sync_time_s >= bound
            if report.msgs_per_sync_block is not None:
                ok = ok and report.msgs_per_sync_block >= threshold_count - 1
            checked += 1
    verdict("metric-invariants", ok and checked > 0, f"{checked} reports checked")
