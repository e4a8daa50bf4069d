"""Shared fixtures: the two reference models and random-instance helpers."""

from pathlib import Path

import numpy as np
import pytest

from ahtest import Model, load_model
from ahtest.strategies import SelectionStrategy

REPO_ROOT = Path(__file__).resolve().parents[1]
MODELS_DIR = REPO_ROOT / "models"


@pytest.fixture(scope="session")
def bsc2() -> Model:
    """Two hypotheses, one experiment: symmetric binary channel, crossover 0.1."""
    return load_model(MODELS_DIR / "bsc2.json")


@pytest.fixture(scope="session")
def tri3() -> Model:
    """Three hypotheses, two experiments; each experiment pins down one rival."""
    return load_model(MODELS_DIR / "tri3.json")


def random_model(rng: np.random.Generator, m: int, u: int, y: int) -> Model:
    """Random full-support model; Dirichlet rows are distinct almost surely."""
    channel = rng.dirichlet(np.ones(y), size=(m, u)) * 0.9 + 0.1 / y
    channel /= channel.sum(axis=2, keepdims=True)
    prior = rng.dirichlet(np.ones(m)) * 0.9 + 0.1 / m
    prior /= prior.sum()
    return Model(
        hypotheses=tuple(f"h{k}" for k in range(m)),
        experiments=tuple(f"u{k}" for k in range(u)),
        observations=tuple(f"y{k}" for k in range(y)),
        channel=channel,
        prior=prior,
    )


def random_trajectory(rng: np.random.Generator, model: Model, n: int):
    from ahtest import Trajectory

    steps = tuple(
        (int(rng.integers(model.num_experiments)), int(rng.integers(model.num_observations)))
        for _ in range(n)
    )
    return Trajectory(steps)


class SoftmaxSelection(SelectionStrategy):
    """Random but deterministic belief-to-mixture map for property tests."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)   # (U, M)
        self.bias = np.asarray(bias, dtype=float)         # (U,)

    def action_distribution(self, model, log_rho, step, horizon):
        z = self.weights @ np.exp(log_rho) + self.bias
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def spec_string(self):
        return "test-softmax"


def random_selection(rng: np.random.Generator, model: Model) -> SoftmaxSelection:
    return SoftmaxSelection(
        rng.normal(size=(model.num_experiments, model.num_hypotheses)),
        rng.normal(size=model.num_experiments),
    )
