"""Experiment-selection and inference strategies.

Selection strategies map an information state (belief, step, horizon) to a
distribution over experiments; inference strategies map the final belief to
a hypothesis index or None for the inconclusive declaration. Both are
deterministic: all sampling randomness lives in the engine, which lets the
exact enumerator reuse the same strategy objects.

Each strategy also implements a batch form operating on a matrix of
log-beliefs, used by the vectorized Monte Carlo engine. The batch form must
agree exactly with the scalar form row by row; the defaults below guarantee
that by delegation, and the native batch overrides use the same primitive
operations as their scalar counterparts.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .belief import Belief, bllr_matrix, log_normalize, logsumexp_last
from .divergence import SaddlePoint
from .model import EpsilonSchedule, Model

INCONCLUSIVE = -1  # batch encoding of the abstain decision

_DEFAULT_ECR_NODE_BUDGET = 10**6


def _point_mass(size: int, index: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


def _argmax_lowest(scores, rel_tol: float = 1e-12) -> int:
    """First index whose score is within rounding noise of the maximum.

    Symmetric models produce mathematically tied scores that differ by an
    ulp depending on summation order; snapping keeps the documented
    lowest-index tie rule deterministic across equivalent computations.
    """
    scores = np.asarray(scores, dtype=float)
    best = float(scores.max())
    cutoff = best - rel_tol * max(1.0, abs(best))
    return int(np.argmax(scores >= cutoff))


def _alpha_table(model: Model, saddles: Sequence[SaddlePoint]) -> np.ndarray:
    if len(saddles) != model.num_hypotheses:
        raise ValueError("need one saddle point per hypothesis")
    table = np.empty((model.num_hypotheses, model.num_experiments))
    for i, sp in enumerate(saddles):
        if sp.hypothesis != i:
            raise ValueError("saddle points must be ordered by hypothesis index")
        table[i] = sp.alpha_star
    return table


# ---------------------------------------------------------------------------
# selection rules
# ---------------------------------------------------------------------------

def select_chernoff(
    model: Model, saddles: Sequence[SaddlePoint], belief: Belief
) -> np.ndarray:
    """Sample-distribution of the MAP-phase rule: the current MAP estimate's
    optimal experiment mixture. Ties in the MAP break toward the lowest index."""
    map_idx = int(np.argmax(belief.log_rho))
    return np.array(saddles[map_idx].alpha_star, dtype=float)


def select_openloop(i: int, saddles: Sequence[SaddlePoint]) -> np.ndarray:
    """Constant mixture: hypothesis i's optimal experiment distribution."""
    return np.array(saddles[i].alpha_star, dtype=float)


def ejs_divergence(model: Model, belief: Belief, u: int) -> float:
    """Expected one-step confidence gain on the (random) true hypothesis.

    sum_h rho(h) sum_y p_h^u(y) [C_h(rho') - C_h(rho)] with rho' the Bayes
    update of rho after (u, y).
    """
    lr = belief.log_rho
    logp_u = model.log_channel[:, u, :]                    # (M, Y)
    base = bllr_matrix(lr)                                 # (M,)
    log_post = log_normalize((lr[:, None] + logp_u).T)     # (Y, M)
    conf = bllr_matrix(log_post)                           # (Y, M)
    weights = np.exp(lr)[:, None] * np.exp(logp_u)         # (M, Y)
    return float(np.sum(weights * (conf.T - base[:, None])))


def select_ejs_greedy(model: Model, belief: Belief) -> np.ndarray:
    """Point mass on the experiment with the largest expected confidence gain."""
    scores = [ejs_divergence(model, belief, u) for u in range(model.num_experiments)]
    return _point_mass(model.num_experiments, _argmax_lowest(scores))


def _ecr_value(model: Model, log_rho: np.ndarray, depth: int) -> float:
    """Best achievable expected terminal confidence on the true hypothesis,
    optimizing the next `depth` experiments (belief-MDP expectimax)."""
    if depth == 0:
        return float(np.sum(np.exp(log_rho) * bllr_matrix(log_rho)))
    best = -math.inf
    for u in range(model.num_experiments):
        log_joint = log_rho[:, None] + model.log_channel[:, u, :]  # (M, Y)
        log_py = logsumexp_last(log_joint.T)                       # (Y,)
        total = 0.0
        for y in range(model.num_observations):
            total += math.exp(log_py[y]) * _ecr_value(
                model, log_joint[:, y] - log_py[y], depth - 1
            )
        best = max(best, total)
    return best


def select_ecr_lookahead(
    model: Model,
    belief: Belief,
    k: int,
    remaining: int,
    node_budget: int = _DEFAULT_ECR_NODE_BUDGET,
) -> np.ndarray:
    """Point mass on the first action of a depth-min(k, remaining) expectimax
    maximizing the expected terminal confidence gain on the true hypothesis."""
    if k < 1:
        raise ValueError("lookahead depth must be >= 1")
    if remaining < 1:
        raise ValueError("no remaining step to plan")
    depth = min(k, remaining)
    branch = model.num_experiments * model.num_observations
    nodes = sum(branch**d for d in range(1, depth + 1))
    if nodes > node_budget:
        raise ValueError(
            f"lookahead tree has {nodes} nodes, exceeding the budget {node_budget}"
        )
    lr = belief.log_rho
    scores = []
    for u in range(model.num_experiments):
        log_joint = lr[:, None] + model.log_channel[:, u, :]
        log_py = logsumexp_last(log_joint.T)
        total = 0.0
        for y in range(model.num_observations):
            total += math.exp(log_py[y]) * _ecr_value(
                model, log_joint[:, y] - log_py[y], depth - 1
            )
        scores.append(total)
    return _point_mass(model.num_experiments, _argmax_lowest(scores))


# ---------------------------------------------------------------------------
# inference rules
# ---------------------------------------------------------------------------

def _decide_by_thresholds(increments: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Batch threshold decision: pick the qualifying hypothesis with the
    largest margin (increment minus threshold), lowest index on ties,
    INCONCLUSIVE when none qualifies. increments has shape (..., M)."""
    margins = increments - thresholds
    qualified = margins >= 0.0
    masked = np.where(qualified, margins, -np.inf)
    winner = np.argmax(masked, axis=-1)
    any_q = np.any(qualified, axis=-1)
    return np.where(any_q, winner, INCONCLUSIVE).astype(np.int64)


def infer_threshold_f_bar(
    model: Model,
    saddles: Sequence[SaddlePoint],
    prior: Belief,
    final: Belief,
    horizon: int,
    delta: float,
) -> Optional[int]:
    """Declare the hypothesis whose confidence gain beats N(D*(i) - delta).

    With several qualifying hypotheses (possible at small horizons) the one
    with the largest margin wins, lowest index on ties; with none, abstain.
    Requires 0 < delta < min_i D*(i).
    """
    d_star = np.array([sp.d_star for sp in saddles])
    if not (0.0 < delta < float(np.min(d_star))):
        raise ValueError(
            f"delta must lie in (0, min_i D*(i)) = (0, {float(np.min(d_star))!r}), "
            f"got {delta!r}"
        )
    increments = bllr_matrix(final.log_rho) - bllr_matrix(prior.log_rho)
    thresholds = horizon * (d_star - delta)
    d = int(_decide_by_thresholds(increments, thresholds))
    return None if d == INCONCLUSIVE else d


def infer_p2_threshold(
    model: Model,
    saddle_i: SaddlePoint,
    lam_bound: float,
    num_hypotheses: int,
    prior: Belief,
    final: Belief,
    horizon: int,
    epsilon: float,
) -> Optional[int]:
    """One-hypothesis test: declare i iff the confidence gain on i reaches
    N D*(i) - 2B sqrt(N log(M/eps)), else abstain.

    The rule is applied verbatim; at small horizons the threshold can be
    negative, in which case i is always declared.
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    i = saddle_i.hypothesis
    inc = float(
        bllr_matrix(final.log_rho)[i] - bllr_matrix(prior.log_rho)[i]
    )
    threshold = horizon * saddle_i.d_star - 2.0 * lam_bound * math.sqrt(
        horizon * math.log(num_hypotheses / epsilon)
    )
    return i if inc >= threshold else None


def infer_map_forced(final: Belief) -> int:
    """Baseline forced decision: the MAP hypothesis, lowest index on ties."""
    return int(np.argmax(final.log_rho))


# ---------------------------------------------------------------------------
# strategy objects (engine interface)
# ---------------------------------------------------------------------------

class SelectionStrategy:
    """Deterministic map (belief, step, horizon) -> distribution over experiments."""

    def action_distribution(
        self, model: Model, log_rho: np.ndarray, step: int, horizon: int
    ) -> np.ndarray:
        raise NotImplementedError

    def batch_action_distributions(
        self, model: Model, log_rho: np.ndarray, step: int, horizon: int
    ) -> np.ndarray:
        # Row-by-row fallback; subclasses override with vector code when the
        # rule is hot in Monte Carlo runs.
        return np.stack([
            self.action_distribution(model, row, step, horizon) for row in log_rho
        ])

    def spec_string(self) -> str:
        raise NotImplementedError


class ChernoffSelection(SelectionStrategy):
    def __init__(self, saddles: Sequence[SaddlePoint]):
        self.saddles = tuple(saddles)
        self._table = None

    def _ensure_table(self, model: Model) -> np.ndarray:
        if self._table is None:
            self._table = _alpha_table(model, self.saddles)
        return self._table

    def action_distribution(self, model, log_rho, step, horizon):
        table = self._ensure_table(model)
        return table[int(np.argmax(log_rho))]

    def batch_action_distributions(self, model, log_rho, step, horizon):
        table = self._ensure_table(model)
        return table[np.argmax(log_rho, axis=1)]

    def spec_string(self):
        return "chernoff"


class OpenLoopSelection(SelectionStrategy):
    def __init__(self, i: int, saddles: Sequence[SaddlePoint]):
        self.i = int(i)
        self.alpha = np.array(saddles[self.i].alpha_star, dtype=float)

    def action_distribution(self, model, log_rho, step, horizon):
        return self.alpha

    def batch_action_distributions(self, model, log_rho, step, horizon):
        return np.broadcast_to(self.alpha, (log_rho.shape[0], self.alpha.size))

    def spec_string(self):
        return f"openloop:i={self.i + 1}"


class UniformSelection(SelectionStrategy):
    def action_distribution(self, model, log_rho, step, horizon):
        u = model.num_experiments
        return np.full(u, 1.0 / u)

    def batch_action_distributions(self, model, log_rho, step, horizon):
        u = model.num_experiments
        return np.broadcast_to(np.full(u, 1.0 / u), (log_rho.shape[0], u))

    def spec_string(self):
        return "uniform"


class EJSGreedySelection(SelectionStrategy):
    def action_distribution(self, model, log_rho, step, horizon):
        return select_ejs_greedy(model, Belief(log_rho))

    def spec_string(self):
        return "ejs"


class ECRLookaheadSelection(SelectionStrategy):
    def __init__(self, k: int, node_budget: int = _DEFAULT_ECR_NODE_BUDGET):
        if k < 1:
            raise ValueError("lookahead depth must be >= 1")
        self.k = int(k)
        self.node_budget = int(node_budget)

    def action_distribution(self, model, log_rho, step, horizon):
        return select_ecr_lookahead(
            model, Belief(log_rho), self.k, horizon - step, self.node_budget
        )

    def spec_string(self):
        return f"ecr:k={self.k}"


class InferenceStrategy:
    """Deterministic map from the final belief to a hypothesis or abstention."""

    def decide(
        self, model: Model, log_prior: np.ndarray, log_final: np.ndarray, horizon: int
    ) -> Optional[int]:
        raise NotImplementedError

    def batch_decide(
        self, model: Model, log_prior: np.ndarray, log_final: np.ndarray, horizon: int
    ) -> np.ndarray:
        out = np.empty(log_final.shape[0], dtype=np.int64)
        for t, row in enumerate(log_final):
            d = self.decide(model, log_prior, row, horizon)
            out[t] = INCONCLUSIVE if d is None else d
        return out

    def spec_string(self) -> str:
        raise NotImplementedError


class FBarInference(InferenceStrategy):
    """Threshold rule with per-hypothesis thresholds N(D*(i) - delta)."""

    def __init__(self, saddles: Sequence[SaddlePoint], delta: float):
        self.saddles = tuple(saddles)
        self.d_star = np.array([sp.d_star for sp in self.saddles])
        if not (0.0 < delta < float(np.min(self.d_star))):
            raise ValueError(
                f"delta must lie in (0, min_i D*(i)) = (0, {float(np.min(self.d_star))!r})"
            )
        self.delta = float(delta)

    def _thresholds(self, horizon: int) -> np.ndarray:
        return horizon * (self.d_star - self.delta)

    def decide(self, model, log_prior, log_final, horizon):
        inc = bllr_matrix(log_final) - bllr_matrix(log_prior)
        d = int(_decide_by_thresholds(inc, self._thresholds(horizon)))
        return None if d == INCONCLUSIVE else d

    def batch_decide(self, model, log_prior, log_final, horizon):
        inc = bllr_matrix(log_final) - bllr_matrix(log_prior)[None, :]
        return _decide_by_thresholds(inc, self._thresholds(horizon))

    def spec_string(self):
        return f"fbar:delta={self.delta!r}"


class P2Inference(InferenceStrategy):
    """One-hypothesis threshold rule with the Hoeffding margin."""

    def __init__(
        self,
        i: int,
        saddle_i: SaddlePoint,
        lam_bound: float,
        num_hypotheses: int,
        epsilon_schedule: EpsilonSchedule,
    ):
        if saddle_i.hypothesis != i:
            raise ValueError("saddle point does not belong to the tested hypothesis")
        self.i = int(i)
        self.saddle = saddle_i
        self.lam_bound = float(lam_bound)
        self.num_hypotheses = int(num_hypotheses)
        self.epsilon_schedule = epsilon_schedule

    def threshold(self, horizon: int) -> float:
        eps = self.epsilon_schedule.epsilon(horizon)
        return horizon * self.saddle.d_star - 2.0 * self.lam_bound * math.sqrt(
            horizon * math.log(self.num_hypotheses / eps)
        )

    def decide(self, model, log_prior, log_final, horizon):
        inc = float(bllr_matrix(log_final)[self.i] - bllr_matrix(log_prior)[self.i])
        return self.i if inc >= self.threshold(horizon) else None

    def batch_decide(self, model, log_prior, log_final, horizon):
        inc = bllr_matrix(log_final)[:, self.i] - bllr_matrix(log_prior)[self.i]
        return np.where(inc >= self.threshold(horizon), self.i, INCONCLUSIVE).astype(np.int64)

    def spec_string(self):
        return f"p2:i={self.i + 1}"


class MAPInference(InferenceStrategy):
    def decide(self, model, log_prior, log_final, horizon):
        return int(np.argmax(log_final))

    def batch_decide(self, model, log_prior, log_final, horizon):
        return np.argmax(log_final, axis=1).astype(np.int64)

    def spec_string(self):
        return "map"


class FixedThresholdInference(InferenceStrategy):
    """Diagnostic rule: declare any hypothesis whose confidence gain reaches a
    fixed theta, largest margin winning. Used to certify the e^{-theta}
    misclassification bound of threshold rules."""

    def __init__(self, theta: float):
        self.theta = float(theta)

    def decide(self, model, log_prior, log_final, horizon):
        inc = bllr_matrix(log_final) - bllr_matrix(log_prior)
        d = int(_decide_by_thresholds(inc, np.full(inc.shape[-1], self.theta)))
        return None if d == INCONCLUSIVE else d

    def batch_decide(self, model, log_prior, log_final, horizon):
        inc = bllr_matrix(log_final) - bllr_matrix(log_prior)[None, :]
        return _decide_by_thresholds(inc, np.full(inc.shape[-1], self.theta))

    def spec_string(self):
        return f"threshold:theta={self.theta!r}"


# ---------------------------------------------------------------------------
# CLI spec strings
# ---------------------------------------------------------------------------

def _resolve_hypothesis(token: str, model: Model) -> int:
    """Resolve a hypothesis reference: exact label first, else 1-based position."""
    if token in model.hypotheses:
        return model.hypotheses.index(token)
    try:
        pos = int(token)
    except ValueError:
        raise ValueError(
            f"{token!r} is neither a hypothesis label nor a 1-based index"
        ) from None
    if not (1 <= pos <= model.num_hypotheses):
        raise ValueError(f"hypothesis index {pos} out of range 1..{model.num_hypotheses}")
    return pos - 1


def _split_spec(spec: str) -> tuple[str, dict[str, str]]:
    head, _, rest = spec.partition(":")
    params: dict[str, str] = {}
    if rest:
        for part in rest.split(","):
            key, eq, value = part.partition("=")
            if not eq:
                raise ValueError(f"malformed parameter {part!r} in spec {spec!r}")
            params[key.strip()] = value.strip()
    return head.strip(), params


def parse_selection(
    spec: str, model: Model, saddles: Sequence[SaddlePoint]
) -> SelectionStrategy:
    """Build a selection strategy from its CLI spec string.

    Recognized: `chernoff`, `openloop:i=<hyp>`, `uniform`, `ejs`, `ecr:k=<depth>`.
    Hypothesis references accept a label or a 1-based position.
    """
    head, params = _split_spec(spec)
    if head == "chernoff":
        return ChernoffSelection(saddles)
    if head == "openloop":
        if "i" not in params:
            raise ValueError("openloop needs a hypothesis, e.g. openloop:i=2")
        return OpenLoopSelection(_resolve_hypothesis(params["i"], model), saddles)
    if head == "uniform":
        return UniformSelection()
    if head == "ejs":
        return EJSGreedySelection()
    if head == "ecr":
        if "k" not in params:
            raise ValueError("ecr needs a depth, e.g. ecr:k=2")
        return ECRLookaheadSelection(int(params["k"]))
    raise ValueError(f"unknown selection strategy spec {spec!r}")


def parse_inference(
    spec: str,
    model: Model,
    saddles: Sequence[SaddlePoint],
    lam_bound: float,
    epsilon_schedule: EpsilonSchedule,
    delta: float,
) -> InferenceStrategy:
    """Build an inference strategy from its CLI spec string.

    Recognized: `fbar` or `fbar:delta=<v>` (default delta passed in),
    `p2:i=<hyp>`, `map`.
    """
    head, params = _split_spec(spec)
    if head == "fbar":
        d = float(params["delta"]) if "delta" in params else delta
        return FBarInference(saddles, d)
    if head == "p2":
        if "i" not in params:
            raise ValueError("p2 needs a hypothesis, e.g. p2:i=1")
        i = _resolve_hypothesis(params["i"], model)
        return P2Inference(i, saddles[i], lam_bound, model.num_hypotheses, epsilon_schedule)
    if head == "map":
        return MAPInference()
    raise ValueError(f"unknown inference strategy spec {spec!r}")
