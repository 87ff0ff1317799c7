"""Contextual bandit policies behind one interface.

The main policy samples per-arm rewards from a Gaussian posterior built on
network-gradient features, but only with a configurable branch probability;
otherwise it acts greedily on the posterior mean. Deterministic-optimism,
decayed-random, ridge-regression, generalized-linear and context-free
baselines share the same select/observe surface so the harness can swap
them freely.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .approximator import (
    FitResult,
    MlpParams,
    RewardHistory,
    fit_regularized,
    forward_batch,
    init_params,
    param_gradient,
    param_gradient_batch,
)
from .errors import InternalConsistencyError, InvalidInputError
from .signal_core import ArmContexts

# Above this parameter count the covariance defaults to its diagonal.
FULL_COVARIANCE_MAX_DIM = 2000


def select_arm(scores: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest arm index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise InvalidInputError("scores must be a non-empty vector")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    return int(np.argmax(scores))


class CovarianceState:
    """Gradient-feature covariance U and its inverse (or diagonal).

    Starts at ridge * I and accumulates g g^T / width per observation.
    Full mode keeps both U and a rank-one-updated U^{-1}; diagonal mode
    keeps only diag(U).
    """

    def __init__(self, dim: int, ridge: float, mode: str):
        if mode not in ("full", "diagonal"):
            raise InvalidInputError(f"unknown covariance mode {mode!r}")
        if ridge <= 0 or dim < 1:
            raise InvalidInputError("need ridge > 0 and dim >= 1")
        self.mode = mode
        self.dim = dim
        self.ridge = float(ridge)
        if mode == "full":
            self.matrix = np.eye(dim) * ridge
            self.inverse = np.eye(dim) / ridge
            self.diagonal = None
        else:
            self.matrix = None
            self.inverse = None
            self.diagonal = np.full(dim, ridge)

    def rank_one_update(self, gradient: np.ndarray, width: int) -> None:
        """Fold one gradient into U (and U^{-1} via the rank-one identity)."""
        g = np.asarray(gradient, dtype=np.float64)
        if g.shape != (self.dim,):
            raise InvalidInputError(f"gradient must have shape ({self.dim},)")
        if self.mode == "diagonal":
            self.diagonal += g**2 / width
            return
        self.matrix += np.outer(g, g) / width
        u_inv_g = self.inverse @ g
        denom = width + float(g @ u_inv_g)
        if denom <= 0:
            raise InternalConsistencyError("covariance update lost positive definiteness")
        self.inverse -= np.outer(u_inv_g, u_inv_g) / denom
        self.inverse = 0.5 * (self.inverse + self.inverse.T)

    def quadratic_forms(self, gradients: np.ndarray) -> np.ndarray:
        """g^T U^{-1} g for each row of ``gradients``."""
        g = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
        if g.shape[1] != self.dim:
            raise InvalidInputError(f"gradients must have {self.dim} columns")
        if self.mode == "diagonal":
            values = np.sum(g**2 / self.diagonal, axis=1)
        else:
            values = np.einsum("ij,jk,ik->i", g, self.inverse, g)
        if np.any(values < -1e-12):
            raise InternalConsistencyError("covariance produced a negative quadratic form")
        return np.maximum(values, 0.0)

    def consistency_error(self) -> float:
        """Relative Frobenius error of U @ U^{-1} vs identity (full mode)."""
        if self.mode != "full":
            raise InvalidInputError("consistency check applies to full mode only")
        eye = np.eye(self.dim)
        return float(
            np.linalg.norm(self.matrix @ self.inverse - eye) / np.linalg.norm(eye)
        )


@dataclass
class NeuralPosteriorState:
    """Everything the gradient-feature posterior needs between rounds."""

    theta: MlpParams
    theta_init: MlpParams
    cov: CovarianceState | None
    ridge: float
    explore_scale: float
    explore_prob: float
    fit_steps: int
    fit_lr: float
    contexts: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    round: int = 0
    explore_rounds: int = 0
    variance_evals: int = 0
    fit_calls: int = 0
    last_fit: FitResult | None = None

    def history(self) -> RewardHistory:
        return RewardHistory(
            contexts=np.asarray(self.contexts), rewards=np.asarray(self.rewards)
        )


def make_neural_state(
    input_dim: int,
    rng: np.random.Generator,
    width: int = 32,
    depth: int = 3,
    ridge: float = 1.0,
    explore_scale: float = 1.0,
    explore_prob: float = 0.8,
    fit_steps: int = 100,
    fit_lr: float = 0.01,
    cov_mode: str = "auto",
    with_covariance: bool = True,
) -> NeuralPosteriorState:
    """Fresh posterior state with seeded network initialization."""
    theta0 = init_params(input_dim, width, depth, rng)
    cov = None
    if with_covariance:
        if cov_mode == "auto":
            cov_mode = "diagonal" if theta0.flat_dim > FULL_COVARIANCE_MAX_DIM else "full"
        cov = CovarianceState(theta0.flat_dim, ridge, cov_mode)
    return NeuralPosteriorState(
        theta=theta0,
        theta_init=theta0,
        cov=cov,
        ridge=ridge,
        explore_scale=explore_scale,
        explore_prob=explore_prob,
        fit_steps=fit_steps,
        fit_lr=fit_lr,
    )


def posterior_variance(x: np.ndarray, state: NeuralPosteriorState) -> float:
    """ridge * g^T U^{-1} g / width at the current parameters; >= 0."""
    if state.cov is None:
        raise InvalidInputError("state has no covariance")
    g = param_gradient(np.asarray(x, dtype=np.float64), state.theta)
    quad = state.cov.quadratic_forms(g[None, :])[0]
    state.variance_evals += 1
    return float(state.ridge * quad / state.theta.width)


def _posterior_variances(contexts: ArmContexts, state: NeuralPosteriorState) -> np.ndarray:
    gradients = param_gradient_batch(contexts.vectors, state.theta)
    quads = state.cov.quadratic_forms(gradients)
    state.variance_evals += contexts.arm_count
    return state.ridge * quads / state.theta.width


def eps_neural_ts_scores(
    contexts: ArmContexts,
    state: NeuralPosteriorState,
    rng: np.random.Generator,
    per_arm_coins: bool = False,
) -> tuple[np.ndarray, bool]:
    """Per-arm scores plus whether the sampling branch was taken.

    One uniform draw decides the branch for the whole round (default): with
    probability ``explore_prob`` every arm's score is drawn from
    Normal(mean, explore_scale^2 * variance); otherwise scores equal the
    posterior means exactly and no variances are evaluated. With
    ``per_arm_coins`` the mixture is applied arm by arm instead.
    """
    means = forward_batch(contexts.vectors, state.theta)
    if per_arm_coins:
        coins = rng.uniform(size=contexts.arm_count) < state.explore_prob
        scores = means.copy()
        if np.any(coins):
            variances = _posterior_variances(contexts, state)
            noise = rng.standard_normal(contexts.arm_count)
            sampled = means + state.explore_scale * np.sqrt(variances) * noise
            scores[coins] = sampled[coins]
        return scores, bool(np.any(coins))

    explored = bool(rng.uniform() < state.explore_prob)
    if not explored:
        return means, False
    variances = _posterior_variances(contexts, state)
    noise = rng.standard_normal(contexts.arm_count)
    return means + state.explore_scale * np.sqrt(variances) * noise, True


def neural_ucb_scores(contexts: ArmContexts, state: NeuralPosteriorState) -> np.ndarray:
    """Deterministic optimism: mean plus explore_scale * posterior std."""
    means = forward_batch(contexts.vectors, state.theta)
    variances = _posterior_variances(contexts, state)
    return means + state.explore_scale * np.sqrt(variances)


def neural_eps_greedy_select(
    contexts: ArmContexts,
    state: NeuralPosteriorState,
    t: int,
    rng: np.random.Generator,
    decay: float = 5.0,
) -> tuple[int, bool]:
    """Uniformly random arm with probability min(1, decay/t), else greedy."""
    if t < 1:
        raise InvalidInputError("round index must be >= 1")
    prob = min(1.0, decay / t) if decay > 0 else 0.0
    if rng.uniform() < prob:
        return int(rng.integers(contexts.arm_count)), True
    means = forward_batch(contexts.vectors, state.theta)
    return select_arm(means), False


def update_neural_state(
    state: NeuralPosteriorState, x_chosen: np.ndarray, reward: float
) -> NeuralPosteriorState:
    """Append the observation, refit the network, fold in the new gradient."""
    return _batch_update_neural_state(state, [(np.asarray(x_chosen, dtype=np.float64), reward)])


def _batch_update_neural_state(
    state: NeuralPosteriorState, pairs: list[tuple[np.ndarray, float]]
) -> NeuralPosteriorState:
    """One refit covering ``pairs``, then one covariance update per pair."""
    if not pairs:
        return state
    for x, reward in pairs:
        if not np.isfinite(reward):
            raise InvalidInputError("reward must be finite")
        state.contexts.append(np.asarray(x, dtype=np.float64))
        state.rewards.append(float(reward))
    fit = fit_regularized(
        state.history(),
        theta_init=state.theta_init,
        theta_warm=state.theta,
        ridge=state.ridge,
        steps=state.fit_steps,
        learning_rate=state.fit_lr,
    )
    state.theta = fit.params
    state.last_fit = fit
    state.fit_calls += 1
    if state.cov is not None:
        gradients = param_gradient_batch(
            np.asarray([x for x, _ in pairs]), state.theta
        )
        for g in gradients:
            state.cov.rank_one_update(g, state.theta.width)
    state.round += len(pairs)
    return state


class Policy:
    """Common select/observe surface for the closed-loop harness."""

    name = "policy"

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def observe(self, x: np.ndarray, reward: float) -> None:
        raise NotImplementedError

    def observe_batch(self, pairs: list[tuple[np.ndarray, float]]) -> None:
        for x, reward in pairs:
            self.observe(x, reward)

    @property
    def last_explored(self) -> bool:
        return False

    def counters(self) -> dict:
        return {}


class EpsNeuralTs(Policy):
    """Posterior sampling on the network posterior, gated by a branch coin."""

    def __init__(
        self,
        input_dim: int,
        rng: np.random.Generator,
        explore_prob: float = 0.8,
        explore_scale: float = 1.0,
        ridge: float = 1.0,
        width: int = 32,
        depth: int = 3,
        fit_steps: int = 100,
        fit_lr: float = 0.01,
        cov_mode: str = "auto",
        per_arm_coins: bool = False,
        name: str = "eps_neural_ts",
    ):
        if not 0.0 <= explore_prob <= 1.0:
            raise InvalidInputError("explore_prob must lie in [0, 1]")
        self.name = name
        self.per_arm_coins = per_arm_coins
        self.state = make_neural_state(
            input_dim,
            rng,
            width=width,
            depth=depth,
            ridge=ridge,
            explore_scale=explore_scale,
            explore_prob=explore_prob,
            fit_steps=fit_steps,
            fit_lr=fit_lr,
            cov_mode=cov_mode,
        )
        self._last_explored = False

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        scores, explored = eps_neural_ts_scores(
            contexts, self.state, rng, per_arm_coins=self.per_arm_coins
        )
        self._last_explored = explored
        if explored:
            self.state.explore_rounds += 1
        return select_arm(scores)

    def observe(self, x: np.ndarray, reward: float) -> None:
        update_neural_state(self.state, x, reward)

    def observe_batch(self, pairs: list[tuple[np.ndarray, float]]) -> None:
        _batch_update_neural_state(self.state, pairs)

    @property
    def last_explored(self) -> bool:
        return self._last_explored

    def counters(self) -> dict:
        return {
            "explore_rounds": self.state.explore_rounds,
            "variance_evals": self.state.variance_evals,
            "fit_calls": self.state.fit_calls,
        }


def neural_ts(input_dim: int, rng: np.random.Generator, **kwargs) -> EpsNeuralTs:
    """The always-sampling special case (branch probability pinned to 1)."""
    kwargs.pop("explore_prob", None)
    kwargs.setdefault("name", "neural_ts")
    return EpsNeuralTs(input_dim, rng, explore_prob=1.0, **kwargs)


class NeuralUcb(Policy):
    """Greedy on mean plus a posterior-standard-deviation bonus."""

    def __init__(
        self,
        input_dim: int,
        rng: np.random.Generator,
        explore_scale: float = 1.0,
        ridge: float = 1.0,
        width: int = 32,
        depth: int = 3,
        fit_steps: int = 100,
        fit_lr: float = 0.01,
        cov_mode: str = "auto",
    ):
        self.name = "neural_ucb"
        self.state = make_neural_state(
            input_dim,
            rng,
            width=width,
            depth=depth,
            ridge=ridge,
            explore_scale=explore_scale,
            explore_prob=0.0,
            fit_steps=fit_steps,
            fit_lr=fit_lr,
            cov_mode=cov_mode,
        )

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        return select_arm(neural_ucb_scores(contexts, self.state))

    def observe(self, x: np.ndarray, reward: float) -> None:
        update_neural_state(self.state, x, reward)

    def observe_batch(self, pairs: list[tuple[np.ndarray, float]]) -> None:
        _batch_update_neural_state(self.state, pairs)

    def counters(self) -> dict:
        return {
            "explore_rounds": 0,
            "variance_evals": self.state.variance_evals,
            "fit_calls": self.state.fit_calls,
        }


class NeuralEpsGreedy(Policy):
    """Network-greedy with a decaying uniformly random exploration schedule."""

    def __init__(
        self,
        input_dim: int,
        rng: np.random.Generator,
        decay: float = 5.0,
        ridge: float = 1.0,
        width: int = 32,
        depth: int = 3,
        fit_steps: int = 100,
        fit_lr: float = 0.01,
    ):
        self.name = "neural_eps_greedy"
        self.decay = decay
        self.state = make_neural_state(
            input_dim,
            rng,
            width=width,
            depth=depth,
            ridge=ridge,
            explore_scale=0.0,
            explore_prob=0.0,
            fit_steps=fit_steps,
            fit_lr=fit_lr,
            with_covariance=False,
        )
        self._last_explored = False

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        arm, explored = neural_eps_greedy_select(
            contexts, self.state, t, rng, decay=self.decay
        )
        self._last_explored = explored
        if explored:
            self.state.explore_rounds += 1
        return arm

    def observe(self, x: np.ndarray, reward: float) -> None:
        update_neural_state(self.state, x, reward)

    def observe_batch(self, pairs: list[tuple[np.ndarray, float]]) -> None:
        _batch_update_neural_state(self.state, pairs)

    @property
    def last_explored(self) -> bool:
        return self._last_explored

    def counters(self) -> dict:
        return {
            "explore_rounds": self.state.explore_rounds,
            "variance_evals": 0,
            "fit_calls": self.state.fit_calls,
        }


class LinearPolicyState:
    """Ridge design matrix A = ridge*I + sum(x x^T), its inverse, and b."""

    def __init__(self, dim: int, ridge: float):
        if ridge <= 0 or dim < 1:
            raise InvalidInputError("need ridge > 0 and dim >= 1")
        self.dim = dim
        self.ridge = float(ridge)
        self.design = np.eye(dim) * ridge
        self.inverse = np.eye(dim) / ridge
        self.response = np.zeros(dim)

    def fold(self, x: np.ndarray, reward: float) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise InvalidInputError(f"context must have shape ({self.dim},)")
        self.design += np.outer(x, x)
        a_inv_x = self.inverse @ x
        denom = 1.0 + float(x @ a_inv_x)
        if denom <= 0:
            raise InternalConsistencyError("design update lost positive definiteness")
        self.inverse -= np.outer(a_inv_x, a_inv_x) / denom
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        self.response += reward * x

    def estimate(self) -> np.ndarray:
        return self.inverse @ self.response

    def bonuses(self, vectors: np.ndarray) -> np.ndarray:
        quads = np.einsum("ij,jk,ik->i", vectors, self.inverse, vectors)
        return np.sqrt(np.maximum(quads, 0.0))


class LinUcb(Policy):
    """Ridge regression point estimate plus a design-inverse bonus."""

    def __init__(self, dim: int, ridge: float = 1.0, bonus_scale: float = 1.0):
        self.name = "lin_ucb"
        self.bonus_scale = bonus_scale
        self.state = LinearPolicyState(dim, ridge)

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        vectors = contexts.vectors
        scores = vectors @ self.state.estimate() + self.bonus_scale * self.state.bonuses(
            vectors
        )
        return select_arm(scores)

    def observe(self, x: np.ndarray, reward: float) -> None:
        self.state.fold(x, reward)


class LinTs(Policy):
    """Posterior sampling with a Gaussian weight posterior around the ridge fit."""

    def __init__(self, dim: int, ridge: float = 1.0, explore_scale: float = 1.0):
        self.name = "lin_ts"
        self.explore_scale = explore_scale
        self.state = LinearPolicyState(dim, ridge)

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        mean = self.state.estimate()
        chol = np.linalg.cholesky(self.state.inverse)
        draw = mean + self.explore_scale * (chol @ rng.standard_normal(self.state.dim))
        return select_arm(contexts.vectors @ draw)

    def observe(self, x: np.ndarray, reward: float) -> None:
        self.state.fold(x, reward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class UcbGlm(Policy):
    """Logistic-link fit on rewards rescaled to [0, 1], plus the ridge bonus.

    Raw rewards are mapped through a running min/max before the link; the
    link weights are refit by a few damped Newton steps per round, warm
    started from the previous solution.
    """

    def __init__(
        self,
        dim: int,
        ridge: float = 1.0,
        bonus_scale: float = 1.0,
        newton_steps: int = 5,
    ):
        self.name = "ucb_glm"
        self.bonus_scale = bonus_scale
        self.newton_steps = newton_steps
        self.state = LinearPolicyState(dim, ridge)
        self.weights = np.zeros(dim)
        self._contexts: list[np.ndarray] = []
        self._rewards: list[float] = []

    def _rescaled_targets(self) -> np.ndarray:
        rewards = np.asarray(self._rewards)
        lo, hi = rewards.min(), rewards.max()
        if hi <= lo:
            return np.full(rewards.shape, 0.5)
        return (rewards - lo) / (hi - lo)

    def _refit(self) -> None:
        x = np.asarray(self._contexts)
        y = self._rescaled_targets()
        w = self.weights
        for _ in range(self.newton_steps):
            mu = _sigmoid(x @ w)
            grad = x.T @ (mu - y) + self.state.ridge * w
            curvature = np.maximum(mu * (1.0 - mu), 1e-4)
            hessian = (x * curvature[:, None]).T @ x + self.state.ridge * np.eye(
                self.state.dim
            )
            w = w - np.linalg.solve(hessian, grad)
        self.weights = w

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        vectors = contexts.vectors
        scores = vectors @ self.weights + self.bonus_scale * self.state.bonuses(vectors)
        return select_arm(scores)

    def observe(self, x: np.ndarray, reward: float) -> None:
        self.state.fold(x, reward)
        self._contexts.append(np.asarray(x, dtype=np.float64))
        self._rewards.append(float(reward))
        self._refit()


@dataclass
class Ucb1State:
    """Per-arm pull counts and empirical means for the context-free baseline."""

    pull_counts: np.ndarray
    reward_sums: np.ndarray

    @classmethod
    def fresh(cls, arm_count: int) -> "Ucb1State":
        return cls(
            pull_counts=np.zeros(arm_count, dtype=np.int64),
            reward_sums=np.zeros(arm_count),
        )

    def mean(self, k: int) -> float:
        return float(self.reward_sums[k] / self.pull_counts[k])


def ucb1_index(state: Ucb1State, k: int, t: int, delta: float | None = None) -> float:
    """Empirical mean plus sqrt(2 log(1/delta) / pulls); +inf when unplayed.

    Without an explicit confidence parameter the anytime schedule
    delta = 1/t^2 is used.
    """
    if t < 1:
        raise InvalidInputError("round index must be >= 1")
    if state.pull_counts[k] == 0:
        return float("inf")
    if delta is None:
        log_term = 2.0 * np.log(t)  # log(1/delta) with delta = 1/t^2
    else:
        if not 0.0 < delta < 1.0:
            raise InvalidInputError("delta must lie in (0, 1)")
        log_term = np.log(1.0 / delta)
    bonus = np.sqrt(2.0 * log_term / state.pull_counts[k])
    return state.mean(k) + float(bonus)


class Ucb1(Policy):
    """Context-free optimism baseline with the anytime confidence schedule.

    Rewards may arrive delayed, so selected arms are queued and observes
    consume them in order.
    """

    def __init__(self, arm_count: int):
        self.name = "ucb1"
        self.arm_count = arm_count
        self.state = Ucb1State.fresh(arm_count)
        self._pending_arms: deque[int] = deque()

    def select(self, contexts: ArmContexts, t: int, rng: np.random.Generator) -> int:
        unplayed = self.state.pull_counts == 0
        if np.any(unplayed):
            arm = int(np.argmax(unplayed))  # first unplayed arm
        else:
            indices = np.asarray(
                [ucb1_index(self.state, k, t) for k in range(self.arm_count)]
            )
            arm = select_arm(indices)
        self._pending_arms.append(arm)
        return arm

    def observe(self, x: np.ndarray, reward: float) -> None:
        if not self._pending_arms:
            raise InternalConsistencyError("observe() without a matching select()")
        arm = self._pending_arms.popleft()
        self.state.pull_counts[arm] += 1
        self.state.reward_sums[arm] += reward
