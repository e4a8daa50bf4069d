"""Episode simulation and exact enumeration under (selection, inference) pairs.

Monte Carlo runs are vectorized across episodes but each episode consumes its
own counter-based random stream keyed by (base seed, conditioning lane,
episode index). That makes every estimate independent of batching and worker
count, lets run_episode reproduce any single episode of a large run exactly,
and keeps reports byte-stable across repeated runs.

Exact enumeration walks the full (experiment, observation) tree depth-first,
carrying per-hypothesis path masses, and is the oracle the Monte Carlo path
is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .belief import Belief, Trajectory, bllr_matrix, log_normalize
from .model import Model
from .strategies import INCONCLUSIVE, InferenceStrategy, SelectionStrategy

# Fixed so floating-point accumulation order never depends on run parameters.
CHUNK_SIZE = 32768

DEFAULT_NODE_BUDGET = 10**7

_MASK64 = (1 << 64) - 1


class EnumerationBudgetError(RuntimeError):
    """The (experiments x observations)^horizon tree exceeds the node budget."""


_MASK48 = (1 << 48) - 1
_MASK16 = (1 << 16) - 1


def episode_seed(base_seed: int, lane: int, episode: int) -> int:
    """Deterministic 128-bit counter-RNG key for one episode stream.

    Packs (base seed, lane, episode index) into disjoint bit fields
    (48 + 16 + 64), so distinct episodes get provably distinct keys
    regardless of scheduling, for seeds below 2**48 and lanes below 2**16.
    The lane is the conditioning hypothesis index for conditioned runs and
    the hypothesis count for prior-sampled runs.
    """
    high = ((base_seed & _MASK48) << 16) | (lane & _MASK16)
    return (high << 64) | (episode & _MASK64)


def _episode_rng(key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key))


def sample_categorical(dists: np.ndarray, r) -> np.ndarray:
    """Inverse-CDF draw: smallest index k with r < cumsum(dists)[k].

    Shared by the scalar and vectorized paths so both consume uniforms with
    identical edge behavior. The clip guards the r > cumsum[-1] corner opened
    by rounding in the cumulative sum.
    """
    dists = np.asarray(dists, dtype=float)
    r = np.asarray(r, dtype=float)
    cum = np.cumsum(dists, axis=-1)
    idx = np.sum(cum <= r[..., None], axis=-1)
    return np.minimum(idx, dists.shape[-1] - 1)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run: model, strategies, horizon, seeding.

    episodes selects Monte Carlo; leaving it None selects exact enumeration.
    conditioning "each" runs a separate episode batch per true hypothesis
    (the variance-reducing default matching the conditional error
    definitions); "prior" samples the true hypothesis per episode.
    """

    model: Model
    selection: SelectionStrategy
    inference: InferenceStrategy
    horizon: int
    episodes: Optional[int] = None
    seed: int = 0
    conditioning: str = "each"
    node_budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.episodes is not None and self.episodes < 1:
            raise ValueError("episode count must be >= 1")
        if self.conditioning not in ("each", "prior"):
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        if self.node_budget < 1:
            raise ValueError("node budget must be >= 1")


@dataclass(frozen=True)
class RunReport:
    """Error probabilities and confidence rates for one run.

    Per-hypothesis entries are None when the conditioning event never
    occurred (possible in prior-sampled Monte Carlo); they are never silently
    reported as zero. Exact reports have zero standard errors.
    """

    mode: str                     # "mc" | "exact"
    horizon: int
    hypotheses: tuple[str, ...]
    psi: tuple[Optional[float], ...]
    phi: tuple[Optional[float], ...]
    gamma: Optional[float]
    jng: tuple[Optional[float], ...]
    psi_se: tuple[Optional[float], ...]
    phi_se: tuple[Optional[float], ...]
    gamma_se: Optional[float]
    jng_se: tuple[Optional[float], ...]
    decision_probs: np.ndarray = field(repr=False)   # (M, M+1), last col abstain
    seed: Optional[int] = None
    episodes: Optional[int] = None
    paths: Optional[int] = None
    misclassification_count: Optional[int] = None

    def to_json_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "horizon": self.horizon,
            "hypotheses": list(self.hypotheses),
            "psi": list(self.psi),
            "phi": list(self.phi),
            "gamma": self.gamma,
            "jng": list(self.jng),
            "stderr": {
                "psi": list(self.psi_se),
                "phi": list(self.phi_se),
                "gamma": self.gamma_se,
                "jng": list(self.jng_se),
            },
            "decision_probs": [list(row) for row in self.decision_probs],
            "seed": self.seed,
        }
        if self.mode == "mc":
            d["episodes"] = self.episodes
            d["misclassification_count"] = self.misclassification_count
        else:
            d["paths"] = self.paths
        return d


def run_episode(
    config: RunConfig, true_h: int, episode_seed_value: int
) -> tuple[Trajectory, Optional[int], Belief]:
    """Simulate one episode; fully determined by (config, true_h, seed value)."""
    model = config.model
    n_steps = config.horizon
    if not (0 <= true_h < model.num_hypotheses):
        raise ValueError(f"hypothesis index {true_h} out of range")
    u01 = _episode_rng(episode_seed_value).random(2 * n_steps)
    log_prior = np.log(model.prior)
    log_rho = log_prior.copy()
    steps = []
    for n in range(n_steps):
        dist = config.selection.action_distribution(model, log_rho, n, n_steps)
        u = int(sample_categorical(dist, u01[2 * n]))
        y = int(sample_categorical(model.channel[true_h, u], u01[2 * n + 1]))
        steps.append((u, y))
        log_rho = log_normalize(log_rho + model.log_channel[:, u, y])
    decision = config.inference.decide(model, log_prior, log_rho, n_steps)
    return Trajectory(tuple(steps)), decision, Belief(log_rho)


def _run_chunk(
    model: Model,
    selection: SelectionStrategy,
    inference: InferenceStrategy,
    horizon: int,
    true_h: np.ndarray,
    uniforms: np.ndarray,
    log_channel_by_uy: np.ndarray,
    record_beliefs: bool = False,
):
    """Advance a chunk of episodes through all steps and decide.

    true_h is a per-episode array of conditioning hypotheses; uniforms has
    shape (chunk, 2 * horizon) laid out as (action, observation) per step.
    """
    m = uniforms.shape[0]
    log_prior = np.log(model.prior)
    log_rho = np.tile(log_prior, (m, 1))
    path = None
    if record_beliefs:
        path = np.empty((m, horizon + 1, model.num_hypotheses))
        path[:, 0, :] = log_rho
    for n in range(horizon):
        dists = selection.batch_action_distributions(model, log_rho, n, horizon)
        u = sample_categorical(dists, uniforms[:, 2 * n])
        y = sample_categorical(model.channel[true_h, u], uniforms[:, 2 * n + 1])
        log_rho = log_normalize(log_rho + log_channel_by_uy[u, y])
        if record_beliefs:
            path[:, n + 1, :] = log_rho
    decisions = inference.batch_decide(model, log_prior, log_rho, horizon)
    increments = bllr_matrix(log_rho) - bllr_matrix(log_prior)[None, :]
    return decisions, increments, path


def _uniform_block(base_seed: int, lane: int, start: int, count: int, width: int) -> np.ndarray:
    out = np.empty((count, width))
    for t in range(count):
        out[t] = _episode_rng(episode_seed(base_seed, lane, start + t)).random(width)
    return out


def simulate_conditioned_batch(
    config: RunConfig, true_h: int, record_beliefs: bool = False
):
    """All episodes of one conditioning lane, chunked.

    Returns (decision_counts (M+1,), inc_sum, inc_sqsum, decisions (E,),
    belief_path or None). The decisions array is always materialized; the
    belief path only on request and only for desk-scale batches.
    """
    model = config.model
    episodes = config.episodes
    horizon = config.horizon
    m_hyp = model.num_hypotheses
    lc_by_uy = np.ascontiguousarray(np.moveaxis(model.log_channel, 0, 2))
    counts = np.zeros(m_hyp + 1, dtype=np.int64)
    inc_sum = 0.0
    inc_sqsum = 0.0
    all_decisions = np.empty(episodes, dtype=np.int64)
    paths = [] if record_beliefs else None
    for start in range(0, episodes, CHUNK_SIZE):
        count = min(CHUNK_SIZE, episodes - start)
        uniforms = _uniform_block(config.seed, true_h, start, count, 2 * horizon)
        decisions, increments, path = _run_chunk(
            model, config.selection, config.inference, horizon,
            np.full(count, true_h), uniforms, lc_by_uy, record_beliefs,
        )
        all_decisions[start:start + count] = decisions
        cols = np.where(decisions == INCONCLUSIVE, m_hyp, decisions)
        counts += np.bincount(cols, minlength=m_hyp + 1)
        own = increments[:, true_h]
        inc_sum += float(own.sum())
        inc_sqsum += float((own * own).sum())
        if record_beliefs:
            paths.append(path)
    belief_path = np.concatenate(paths, axis=0) if record_beliefs else None
    return counts, inc_sum, inc_sqsum, all_decisions, belief_path


def _bernoulli_se(p_hat: float, n: int) -> Optional[float]:
    if n < 2:
        return None
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / (n - 1))


def _mean_se(total: float, sqtotal: float, n: int) -> Optional[float]:
    if n < 2:
        return None
    var = max(sqtotal - total * total / n, 0.0) / (n - 1)
    return math.sqrt(var / n)


def monte_carlo(config: RunConfig) -> RunReport:
    """Monte Carlo estimates of the error probabilities and confidence rates.

    Conditioned mode runs config.episodes episodes per hypothesis; the
    misclassification probability is assembled from the per-hypothesis
    declaration rates through its defining mixture.
    """
    if config.episodes is None:
        raise ValueError("monte_carlo needs an episode count")
    if config.conditioning == "each":
        return _monte_carlo_conditioned(config)
    return _monte_carlo_prior(config)


def _monte_carlo_conditioned(config: RunConfig) -> RunReport:
    model = config.model
    m_hyp = model.num_hypotheses
    episodes = config.episodes
    prior = model.prior

    p_decide = np.zeros((m_hyp, m_hyp + 1))
    jng: list[Optional[float]] = []
    jng_se: list[Optional[float]] = []
    misclass = 0
    for h in range(m_hyp):
        counts, inc_sum, inc_sqsum, _, _ = simulate_conditioned_batch(config, h)
        p_decide[h] = counts / episodes
        jng.append(inc_sum / (episodes * config.horizon))
        se = _mean_se(inc_sum, inc_sqsum, episodes)
        jng_se.append(None if se is None else se / config.horizon)
        misclass += int(counts.sum() - counts[h] - counts[m_hyp])

    psi = [1.0 - float(p_decide[i, i]) for i in range(m_hyp)]
    psi_se = [_bernoulli_se(p, episodes) for p in psi]

    phi: list[float] = []
    phi_se: list[Optional[float]] = []
    for i in range(m_hyp):
        weights = np.array([
            prior[h] / (1.0 - prior[i]) if h != i else 0.0 for h in range(m_hyp)
        ])
        phi.append(float(np.sum(weights * p_decide[:, i])))
        if episodes < 2:
            phi_se.append(None)
        else:
            var = sum(
                (weights[h] ** 2) * p_decide[h, i] * (1.0 - p_decide[h, i]) / (episodes - 1)
                for h in range(m_hyp)
            )
            phi_se.append(math.sqrt(var))

    gamma = float(sum(phi[i] * (1.0 - prior[i]) for i in range(m_hyp)))
    if episodes < 2:
        gamma_se = None
    else:
        # Row sums can undershoot by one ulp when no misclassification occurred.
        mis_rate = [
            min(max(float(p_decide[h].sum() - p_decide[h, h] - p_decide[h, m_hyp]), 0.0), 1.0)
            for h in range(m_hyp)
        ]
        gamma_se = math.sqrt(sum(
            (prior[h] ** 2) * mis_rate[h] * (1.0 - mis_rate[h]) / (episodes - 1)
            for h in range(m_hyp)
        ))

    return RunReport(
        mode="mc",
        horizon=config.horizon,
        hypotheses=model.hypotheses,
        psi=tuple(psi),
        phi=tuple(phi),
        gamma=gamma,
        jng=tuple(jng),
        psi_se=tuple(psi_se),
        phi_se=tuple(phi_se),
        gamma_se=gamma_se,
        jng_se=tuple(jng_se),
        decision_probs=p_decide,
        seed=config.seed,
        episodes=episodes,
        misclassification_count=misclass,
    )


def _monte_carlo_prior(config: RunConfig) -> RunReport:
    model = config.model
    m_hyp = model.num_hypotheses
    episodes = config.episodes
    prior = model.prior
    lane = m_hyp  # distinct from all conditioned lanes
    lc_by_uy = np.ascontiguousarray(np.moveaxis(model.log_channel, 0, 2))

    counts = np.zeros((m_hyp, m_hyp + 1), dtype=np.int64)
    inc_sum = np.zeros(m_hyp)
    inc_sqsum = np.zeros(m_hyp)
    for start in range(0, episodes, CHUNK_SIZE):
        count = min(CHUNK_SIZE, episodes - start)
        uniforms = _uniform_block(config.seed, lane, start, count, 2 * config.horizon + 1)
        hs = sample_categorical(np.tile(prior, (count, 1)), uniforms[:, 0])
        decisions, increments, _ = _run_chunk(
            model, config.selection, config.inference, config.horizon,
            hs, uniforms[:, 1:], lc_by_uy,
        )
        cols = np.where(decisions == INCONCLUSIVE, m_hyp, decisions)
        np.add.at(counts, (hs, cols), 1)
        own = increments[np.arange(count), hs]
        np.add.at(inc_sum, hs, own)
        np.add.at(inc_sqsum, hs, own * own)

    n_h = counts.sum(axis=1)
    psi: list[Optional[float]] = []
    psi_se: list[Optional[float]] = []
    jng: list[Optional[float]] = []
    jng_se: list[Optional[float]] = []
    for i in range(m_hyp):
        if n_h[i] == 0:
            psi.append(None); psi_se.append(None)
            jng.append(None); jng_se.append(None)
            continue
        p = 1.0 - counts[i, i] / n_h[i]
        psi.append(float(p))
        psi_se.append(_bernoulli_se(p, int(n_h[i])))
        jng.append(float(inc_sum[i] / (n_h[i] * config.horizon)))
        se = _mean_se(float(inc_sum[i]), float(inc_sqsum[i]), int(n_h[i]))
        jng_se.append(None if se is None else se / config.horizon)

    phi: list[Optional[float]] = []
    phi_se: list[Optional[float]] = []
    for i in range(m_hyp):
        den = int(episodes - n_h[i])
        if den == 0:
            phi.append(None); phi_se.append(None)
            continue
        num = int(counts[:, i].sum() - counts[i, i])
        p = num / den
        phi.append(float(p))
        phi_se.append(_bernoulli_se(p, den))

    if any(v is None for v in phi):
        gamma = None
        gamma_se = None
    else:
        gamma = float(sum(phi[i] * (1.0 - prior[i]) for i in range(m_hyp)))
        gamma_se = math.sqrt(sum(
            ((1.0 - prior[i]) * se) ** 2 for i, se in enumerate(phi_se)
        )) if all(se is not None for se in phi_se) else None

    misclass = int(counts.sum() - np.trace(counts[:, :m_hyp]) - counts[:, m_hyp].sum())
    p_decide = counts / np.maximum(n_h, 1)[:, None]

    return RunReport(
        mode="mc",
        horizon=config.horizon,
        hypotheses=model.hypotheses,
        psi=tuple(psi),
        phi=tuple(phi),
        gamma=gamma,
        jng=tuple(jng),
        psi_se=tuple(psi_se),
        phi_se=tuple(phi_se),
        gamma_se=gamma_se,
        jng_se=tuple(jng_se),
        decision_probs=p_decide,
        seed=config.seed,
        episodes=episodes,
        misclassification_count=misclass,
    )


def walk_paths(model: Model, selection: SelectionStrategy, horizon: int,
               visit, node_budget: int = DEFAULT_NODE_BUDGET) -> int:
    """Depth-first traversal of the full (experiment, observation) tree.

    Calls visit(action_prob, obs_likelihood (M,), final_log_rho, lam (M,M),
    kl_sums (M,M)) at every reachable leaf, where lam[i, j] is the summed
    per-step log-likelihood ratio of i against j along the path and
    kl_sums[i, j] the summed per-step divergences D(p_i^u || p_j^u) over the
    path's experiments. Branches with zero action probability are pruned.
    Returns the number of leaves visited.
    """
    n_exp = model.num_experiments
    n_obs = model.num_observations
    m_hyp = model.num_hypotheses
    if (n_exp * n_obs) ** horizon > node_budget:
        raise EnumerationBudgetError(
            f"({n_exp} experiments x {n_obs} observations)^{horizon} exceeds "
            f"the node budget {node_budget}"
        )
    lc = model.log_channel
    kl_by_u = np.einsum("iuy,ijuy->iju", model.channel, lc[:, None] - lc[None, :])
    log_prior = np.log(model.prior)
    visited = 0

    def rec(n, aprob, lik, log_rho, lam, kls):
        nonlocal visited
        if n == horizon:
            visited += 1
            visit(aprob, lik, log_rho, lam, kls)
            return
        dist = selection.action_distribution(model, log_rho, n, horizon)
        for u in range(n_exp):
            pu = float(dist[u])
            if pu <= 0.0:
                continue
            for y in range(n_obs):
                lc_uy = lc[:, u, y]
                rec(
                    n + 1,
                    aprob * pu,
                    lik * model.channel[:, u, y],
                    log_normalize(log_rho + lc_uy),
                    lam + (lc_uy[:, None] - lc_uy[None, :]),
                    kls + kl_by_u[:, :, u],
                )

    rec(0, 1.0, np.ones(m_hyp), log_prior, np.zeros((m_hyp, m_hyp)), np.zeros((m_hyp, m_hyp)))
    return visited


def enumerate_exact(config: RunConfig) -> RunReport:
    """Exact error probabilities and confidence rates by full tree traversal."""
    model = config.model
    m_hyp = model.num_hypotheses
    horizon = config.horizon
    log_prior = np.log(model.prior)
    base_conf = bllr_matrix(log_prior)
    prior = model.prior

    dm = np.zeros((m_hyp, m_hyp + 1))
    jacc = np.zeros(m_hyp)

    def visit(aprob, lik, log_rho, lam, kls):
        w = aprob * lik
        d = config.inference.decide(model, log_prior, log_rho, horizon)
        dm[:, m_hyp if d is None else d] += w
        jacc_local = w * (bllr_matrix(log_rho) - base_conf)
        jacc[:] += jacc_local

    paths = walk_paths(model, config.selection, horizon, visit, config.node_budget)

    mass = dm.sum(axis=1)
    if np.any(np.abs(mass - 1.0) > 1e-9):
        raise RuntimeError(
            f"path probability mass per hypothesis deviates from 1: {mass!r}"
        )

    psi = [float(1.0 - dm[i, i]) for i in range(m_hyp)]
    phi = [
        float(sum(prior[h] / (1.0 - prior[i]) * dm[h, i] for h in range(m_hyp) if h != i))
        for i in range(m_hyp)
    ]
    gamma = float(sum(phi[i] * (1.0 - prior[i]) for i in range(m_hyp)))
    jng = [float(jacc[i] / horizon) for i in range(m_hyp)]
    zeros = tuple(0.0 for _ in range(m_hyp))

    return RunReport(
        mode="exact",
        horizon=horizon,
        hypotheses=model.hypotheses,
        psi=tuple(psi),
        phi=tuple(phi),
        gamma=gamma,
        jng=tuple(jng),
        psi_se=zeros,
        phi_se=zeros,
        gamma_se=0.0,
        jng_se=zeros,
        decision_probs=dm,
        seed=None,
        paths=paths,
    )


def enumerate_pair_expectations(config: RunConfig):
    """Exact E_i[sum_n lambda(i over j)] and E_i[sum_n D(p_i^u || p_j^u)].

    Returns two (M, M) matrices (rows condition on the true hypothesis i,
    columns index the rival j); the diagonal is zero.
    """
    model = config.model
    m_hyp = model.num_hypotheses
    lam_exp = np.zeros((m_hyp, m_hyp))
    kl_exp = np.zeros((m_hyp, m_hyp))

    def visit(aprob, lik, log_rho, lam, kls):
        w = aprob * lik
        lam_exp[:] += w[:, None] * lam
        kl_exp[:] += w[:, None] * kls

    walk_paths(model, config.selection, config.horizon, visit, config.node_budget)
    return lam_exp, kl_exp


def estimate_jng(config: RunConfig) -> tuple[Optional[float], ...]:
    """Per-hypothesis expected confidence rate, exact or Monte Carlo."""
    if config.episodes is None:
        return enumerate_exact(config).jng
    return monte_carlo(config).jng
