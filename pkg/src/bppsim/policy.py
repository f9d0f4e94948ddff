"""Noisy-score ranking policy and value head, with analytic gradients.

The policy scores every connection slot independently with a tiny shared MLP
over that slot's normalized latency estimate, perturbs the scores with
Gaussian noise, and ranks neighbors by descending score. The realized score
vector is the action for training purposes: its Gaussian log-density under the
current parameters is a differentiable surrogate for the permutation
log-probability. The value head maps the full padded observation to a scalar.

All math is plain numpy; backward passes are written by hand and are checked
against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import RngStream

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PolicyParams:
    """Flat parameter container; every leaf is a float64 ndarray."""

    s_w1: np.ndarray  # (H,)   scorer input weights (scalar input)
    s_b1: np.ndarray  # (H,)
    s_w2: np.ndarray  # (H,)   scorer output weights
    s_b2: np.ndarray  # ()
    v_w1: np.ndarray  # (Hv, D) value input weights
    v_b1: np.ndarray  # (Hv,)
    v_w2: np.ndarray  # (Hv,)
    v_b2: np.ndarray  # ()
    log_std: np.ndarray  # ()

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "s_w1": self.s_w1, "s_b1": self.s_b1, "s_w2": self.s_w2, "s_b2": self.s_b2,
            "v_w1": self.v_w1, "v_b1": self.v_b1, "v_w2": self.v_w2, "v_b2": self.v_b2,
            "log_std": self.log_std,
        }

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.as_dict().items()})

    @property
    def obs_dim(self) -> int:
        return self.v_w1.shape[1]

    def sigma(self) -> float:
        return float(np.exp(self.log_std))

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def assert_finite(self) -> None:
        for name, arr in self.as_dict().items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in parameter {name}")


def init_policy(
    obs_dim: int,
    rng: RngStream,
    hidden_scorer: int = 16,
    hidden_value: int = 32,
    log_std_init: float = -2.0,
) -> PolicyParams:
    """Random hidden features, zeroed output layers.

    Zero output weights make the initial policy score every neighbor
    identically, so untrained sampling is an exchangeable-noise sort, i.e.
    uniformly random permutations. Hidden layers get enough spread to span
    inputs in [0, 1].
    """
    g = rng.gen
    return PolicyParams(
        s_w1=g.normal(0.0, 2.0, size=hidden_scorer),
        s_b1=g.normal(0.0, 1.0, size=hidden_scorer),
        s_w2=np.zeros(hidden_scorer),
        s_b2=np.zeros(()),
        v_w1=g.normal(0.0, 1.0 / np.sqrt(obs_dim), size=(hidden_value, obs_dim)),
        v_b1=np.zeros(hidden_value),
        v_w2=np.zeros(hidden_value),
        v_b2=np.zeros(()),
        log_std=np.full((), float(log_std_init)),
    )


def zeroed_policy(obs_dim: int, hidden_scorer: int = 16, hidden_value: int = 32,
                  log_std_init: float = -2.0) -> PolicyParams:
    """All-zero parameters; greedy ranking degenerates to the identity order."""
    return PolicyParams(
        s_w1=np.zeros(hidden_scorer),
        s_b1=np.zeros(hidden_scorer),
        s_w2=np.zeros(hidden_scorer),
        s_b2=np.zeros(()),
        v_w1=np.zeros((hidden_value, obs_dim)),
        v_b1=np.zeros(hidden_value),
        v_w2=np.zeros(hidden_value),
        v_b2=np.zeros(()),
        log_std=np.full((), float(log_std_init)),
    )


# -- scorer ---------------------------------------------------------------


def score_forward(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean score for each entry of x (any shape). Returns (scores, tanh cache)."""
    pre = x[..., None] * params.s_w1 + params.s_b1
    h = np.tanh(pre)
    m = h @ params.s_w2 + params.s_b2
    return m, h


def score_backward(
    params: PolicyParams, x: np.ndarray, h: np.ndarray, dm: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate scorer gradients given d(loss)/d(mean score)."""
    nh = h.shape[-1]
    h_flat = h.reshape(-1, nh)
    dm_flat = dm.reshape(-1)
    grads["s_b2"] += dm_flat.sum()
    grads["s_w2"] += h_flat.T @ dm_flat
    dpre = (dm[..., None] * params.s_w2) * (1.0 - h * h)
    dpre_flat = dpre.reshape(-1, nh)
    grads["s_w1"] += dpre_flat.T @ x.reshape(-1)
    grads["s_b1"] += dpre_flat.sum(axis=0)


# -- value head -------------------------------------------------------------


def value_forward(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scalar value per observation row. x is (B, D) or (D,)."""
    single = x.ndim == 1
    xb = x[None, :] if single else x
    h = np.tanh(xb @ params.v_w1.T + params.v_b1)
    v = h @ params.v_w2 + params.v_b2
    if single:
        return v[0], h
    return v, h


def value_backward(
    params: PolicyParams, x: np.ndarray, h: np.ndarray, dv: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    grads["v_b2"] += np.sum(dv)
    grads["v_w2"] += h.T @ dv
    dpre = (dv[:, None] * params.v_w2) * (1.0 - h * h)
    grads["v_w1"] += dpre.T @ x
    grads["v_b1"] += dpre.sum(axis=0)


def zero_grads(params: PolicyParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}


# -- sampling ---------------------------------------------------------------


def gaussian_log_prob(scores: np.ndarray, means: np.ndarray, log_std: float) -> float:
    """Log-density of realized scores under N(means, exp(log_std)^2), iid."""
    sigma = np.exp(log_std)
    z = (scores - means) / sigma
    return float(np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI))


def sample_ranking(
    params: PolicyParams,
    latencies: np.ndarray,
    degree: int,
    rng: RngStream | None,
    greedy: bool = False,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Draw a ranking over the first ``degree`` observation slots.

    Returns (permutation, realized scores, log_prob, value_estimate). The
    permutation sorts slots by descending score with ties going to the lower
    slot index. Greedy mode skips the noise (and draws nothing from rng).
    """
    means, _ = score_forward(params, latencies[:degree])
    if greedy:
        scores = means
    else:
        if rng is None:
            raise ValueError("stochastic sampling requires an rng")
        z = rng.gen.standard_normal(degree)
        scores = means + params.sigma() * z
    perm = np.argsort(-scores, kind="stable")
    log_prob = gaussian_log_prob(scores, means, float(params.log_std))
    value, _ = value_forward(params, latencies)
    return perm, scores, log_prob, float(value)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_VERSION = "1"


def save_policy(path: str, params: PolicyParams, meta: dict | None = None) -> None:
    arrays = {k: v for k, v in params.as_dict().items()}
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    for key, val in (meta or {}).items():
        arrays[f"meta_{key}"] = np.array(val)
    np.savez(path, **arrays)


def load_policy(path: str) -> tuple[PolicyParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        version = str(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        kwargs = {
            k: np.asarray(data[k], dtype=float)
            for k in ("s_w1", "s_b1", "s_w2", "s_b2", "v_w1", "v_b1", "v_w2", "v_b2", "log_std")
        }
        meta = {}
        for key in data.files:
            if key.startswith("meta_"):
                val = data[key]
                meta[key[5:]] = val.item() if val.ndim == 0 else val
    return PolicyParams(**kwargs), meta
