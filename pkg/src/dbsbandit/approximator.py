"""Bias-free fully connected ReLU network with width-scaled scalar output.

The network computes f(x) = sqrt(width) * W_L ReLU(W_{L-1} ... ReLU(W_1 x)).
Parameter gradients are accumulated analytically in reverse mode, and the
trainer minimizes the squared prediction error plus a quadratic pull toward
the initial parameters (see :func:`fit_regularized`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitDivergenceError, InvalidInputError


@dataclass(frozen=True)
class MlpParams:
    """Immutable weights of the network.

    ``layer_weights[0]`` is (width, input_dim), hidden layers are
    (width, width), and the last layer is (1, width). The flat view
    concatenates each layer raveled row-major, in layer order.
    """

    layer_weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.layer_weights)
        if len(weights) < 2:
            raise InvalidInputError("network needs at least 2 layers")
        width = weights[0].shape[0]
        for i, w in enumerate(weights):
            if w.ndim != 2:
                raise InvalidInputError(f"layer {i} weights must be 2-D")
        if weights[-1].shape != (1, width):
            raise InvalidInputError(f"output layer must be (1, {width})")
        for i, w in enumerate(weights[1:-1], start=1):
            if w.shape != (width, width):
                raise InvalidInputError(f"hidden layer {i} must be ({width}, {width})")
        for w in weights:
            w.setflags(write=False)
        object.__setattr__(self, "layer_weights", weights)

    @property
    def depth(self) -> int:
        return len(self.layer_weights)

    @property
    def width(self) -> int:
        return int(self.layer_weights[0].shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.layer_weights[0].shape[1])

    @property
    def flat_dim(self) -> int:
        return sum(w.size for w in self.layer_weights)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layer_weights])

    @classmethod
    def from_flat(cls, flat: np.ndarray, input_dim: int, width: int, depth: int) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        shapes = layer_shapes(input_dim, width, depth)
        expected = sum(r * c for r, c in shapes)
        if flat.shape != (expected,):
            raise InvalidInputError(f"flat vector must have length {expected}")
        weights = []
        offset = 0
        for rows, cols in shapes:
            size = rows * cols
            weights.append(flat[offset : offset + size].reshape(rows, cols).copy())
            offset += size
        return cls(layer_weights=tuple(weights))


def layer_shapes(input_dim: int, width: int, depth: int) -> list[tuple[int, int]]:
    """Weight shapes for a network of the given geometry."""
    if depth < 2 or width < 1 or input_dim < 1:
        raise InvalidInputError("need depth >= 2, width >= 1, input_dim >= 1")
    shapes = [(width, input_dim)]
    shapes.extend((width, width) for _ in range(depth - 2))
    shapes.append((1, width))
    return shapes


def flat_parameter_count(input_dim: int, width: int, depth: int) -> int:
    return sum(r * c for r, c in layer_shapes(input_dim, width, depth))


def init_params(
    input_dim: int, width: int, depth: int, rng: np.random.Generator
) -> MlpParams:
    """Gaussian initialization with per-layer std 1/sqrt(fan_in).

    Keeps the width-scaled output O(1) for O(1)-norm inputs.
    """
    weights = []
    for rows, cols in layer_shapes(input_dim, width, depth):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(cols), size=(rows, cols)))
    return MlpParams(layer_weights=tuple(weights))


def _forward_stack(x_batch: np.ndarray, params: MlpParams) -> list[np.ndarray]:
    """Pre-activations per layer for a (n, input_dim) batch."""
    pre = [x_batch @ params.layer_weights[0].T]
    for w in params.layer_weights[1:]:
        pre.append(np.maximum(pre[-1], 0.0) @ w.T)
    return pre


def forward_batch(x_batch: np.ndarray, params: MlpParams) -> np.ndarray:
    """Network outputs for a (n, input_dim) batch, shape (n,)."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != params.input_dim:
        raise InvalidInputError(
            f"batch must be (n, {params.input_dim}), got {x_batch.shape}"
        )
    pre = _forward_stack(x_batch, params)
    return np.sqrt(params.width) * pre[-1][:, 0]


def forward(x: np.ndarray, params: MlpParams) -> float:
    """Scalar network output for one context vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != params.input_dim:
        raise InvalidInputError(f"input must be a vector of length {params.input_dim}")
    return float(forward_batch(x[None, :], params)[0])


def param_gradient_batch(x_batch: np.ndarray, params: MlpParams) -> np.ndarray:
    """Per-sample gradients of the output w.r.t. the flat parameters, (n, p).

    ReLU subgradient at exactly 0 is taken as 0. Row ordering of the flat
    view matches :meth:`MlpParams.flat`.
    """
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[1] != params.input_dim:
        raise InvalidInputError(
            f"batch must be (n, {params.input_dim}), got {x_batch.shape}"
        )
    n = x_batch.shape[0]
    pre = _forward_stack(x_batch, params)
    acts = [x_batch] + [np.maximum(p, 0.0) for p in pre[:-1]]
    scale = np.sqrt(params.width)

    # delta[l] = d out / d pre[l]; output layer first
    grads = [None] * params.depth
    delta = np.full((n, 1), scale)
    for layer in range(params.depth - 1, 0, -1):
        grads[layer] = delta[:, :, None] * acts[layer][:, None, :]
        delta = (delta @ params.layer_weights[layer]) * (pre[layer - 1] > 0.0)
    grads[0] = delta[:, :, None] * acts[0][:, None, :]
    return np.concatenate([g.reshape(n, -1) for g in grads], axis=1)


def param_gradient(x: np.ndarray, params: MlpParams) -> np.ndarray:
    """Flat gradient vector of the output at one context vector, shape (p,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != params.input_dim:
        raise InvalidInputError(f"input must be a vector of length {params.input_dim}")
    return param_gradient_batch(x[None, :], params)[0]


@dataclass(frozen=True)
class RewardHistory:
    """Observed (context vector, reward) pairs, in round order."""

    contexts: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        contexts = np.asarray(self.contexts, dtype=np.float64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        if contexts.ndim != 2 or rewards.ndim != 1 or contexts.shape[0] != rewards.size:
            raise InvalidInputError("contexts must be (n, d) with matching rewards (n,)")
        if contexts.shape[0] < 1:
            raise InvalidInputError("history must be non-empty")
        if not (np.all(np.isfinite(contexts)) and np.all(np.isfinite(rewards))):
            raise InvalidInputError("history entries must be finite")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self) -> int:
        return int(self.rewards.size)


@dataclass(frozen=True)
class FitResult:
    params: MlpParams
    final_loss: float
    losses: np.ndarray | None = None


def regularized_loss(
    history: RewardHistory, params: MlpParams, theta_init: MlpParams, ridge: float
) -> float:
    """Sum of squared-error halves plus the width-scaled pull toward theta_init."""
    residual = forward_batch(history.contexts, params) - history.rewards
    pull = sum(
        float(np.sum((w - w0) ** 2))
        for w, w0 in zip(params.layer_weights, theta_init.layer_weights)
    )
    return float(0.5 * np.sum(residual**2) + 0.5 * params.width * ridge * pull)


def fit_regularized(
    history: RewardHistory,
    theta_init: MlpParams,
    theta_warm: MlpParams,
    ridge: float,
    steps: int,
    learning_rate: float,
    record_losses: bool = False,
) -> FitResult:
    """Minimize squared error with a quadratic anchor to ``theta_init``.

    Runs ``steps`` full-batch proximal gradient steps starting from
    ``theta_warm``: an explicit step on the data term (scaled by 1/n so the
    step size is insensitive to history length) followed by the exact
    shrinkage step for the anchor term. A plain explicit step on the anchor
    would diverge for large ridge values; the proximal form is stable for
    any ridge and has the same stationary points.
    """
    if ridge <= 0:
        raise InvalidInputError("ridge must be positive")
    if steps < 1 or learning_rate <= 0:
        raise InvalidInputError("need steps >= 1 and learning_rate > 0")
    if theta_warm.input_dim != history.contexts.shape[1]:
        raise InvalidInputError("history context dimension does not match network")

    n = len(history)
    x_batch = history.contexts
    targets = history.rewards
    width = theta_warm.width
    scale = np.sqrt(width)
    step = learning_rate / n
    shrink = 1.0 / (1.0 + step * width * ridge)

    weights = [w.copy() for w in theta_warm.layer_weights]
    anchors = [w for w in theta_init.layer_weights]
    losses = np.empty(steps + 1) if record_losses else None

    for j in range(steps):
        pre = [x_batch @ weights[0].T]
        for w in weights[1:]:
            pre.append(np.maximum(pre[-1], 0.0) @ w.T)
        acts = [x_batch] + [np.maximum(p, 0.0) for p in pre[:-1]]
        residual = scale * pre[-1][:, 0] - targets

        loss = 0.5 * float(np.sum(residual**2)) + 0.5 * width * ridge * sum(
            float(np.sum((w - w0) ** 2)) for w, w0 in zip(weights, anchors)
        )
        if not np.isfinite(loss):
            raise FitDivergenceError(step=j, loss=loss)
        if record_losses:
            losses[j] = loss

        delta = residual[:, None] * scale
        data_grads = [None] * len(weights)
        for layer in range(len(weights) - 1, 0, -1):
            data_grads[layer] = delta.T @ acts[layer]
            delta = (delta @ weights[layer]) * (pre[layer - 1] > 0.0)
        data_grads[0] = delta.T @ acts[0]

        for i in range(len(weights)):
            weights[i] = anchors[i] + shrink * (
                weights[i] - step * data_grads[i] - anchors[i]
            )

    result = MlpParams(layer_weights=tuple(weights))
    final_loss = regularized_loss(history, result, theta_init, ridge)
    if not np.isfinite(final_loss):
        raise FitDivergenceError(step=steps, loss=final_loss)
    if record_losses:
        losses[steps] = final_loss
    return FitResult(params=result, final_loss=final_loss, losses=losses)
