"""Block-hash propagation simulator with a learned broadcast-ordering agent."""

__version__ = "0.1.0"

from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .engine import EventQueue, RngStream, derive_stream, run_until, stable_seed
from .env import EpisodeOutcome, Observation, RankingAction, episode_reward, observe, run_episode
from .metrics import (
    CarbonModel,
    PairedRun,
    SimReport,
    carbon_estimate,
    compute_report,
    ecdf,
    summarize_experiment,
    wilcoxon_rank_sum,
)
from .network import LatencyModel, Topology, TopologyConfig, build_topology, sample_latency, transmission_delay
from .policy import PolicyParams, init_policy, load_policy, sample_ranking, save_policy
from .ppo import Hyperparams, Trajectory, discounted_returns, gae_advantages, ppo_update
from .protocol import Block, NodeState, ProtocolConfig, Simulation
from .runner import evaluate_pairs
from .trainer import train
