"""Score-space regressors: a small fully connected network trained by
backpropagation, and the closed-form linear baseline between score spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fofr.errors import DivergenceDetected, ShapeMismatch

ACTIVATIONS = ("elu", "relu", "tanh")
OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_widths: tuple = (16,)
    output_dim: int = 1
    hidden_activation: str = "elu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeMismatch("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.hidden_widths):
            raise ShapeMismatch("hidden widths must be >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def layer_dims(self) -> list:
        return [self.input_dim, *self.hidden_widths, self.output_dim]


@dataclass
class NetworkParams:
    """Per-layer (out x in) weight matrices and (out,) bias vectors."""

    weights: list
    biases: list
    hidden_activation: str = "elu"

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases],
                             self.hidden_activation)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int | None = None
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.val_fraction <= 0.5:
            raise ValueError("val_fraction must lie in [0, 0.5]")


@dataclass(frozen=True)
class FflmParams:
    """Linear baseline: a (P x L) map between input and target score spaces."""

    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        object.__setattr__(self, "B", B)
        if B.ndim != 2 or not np.all(np.isfinite(B)):
            raise ShapeMismatch("B must be a finite 2-d matrix")


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None


def init_network(spec: NetworkSpec) -> NetworkParams:
    """Uniform(-1, 1)/sqrt(fan_in) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, spec.hidden_activation)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(x >= 0, x, np.expm1(x))
    if name == "relu":
        return np.maximum(0.0, x)
    return np.tanh(x)


def _act_grad(name: str, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(x >= 0, 1.0, a + 1.0)
    if name == "relu":
        return (x > 0).astype(float)
    return 1.0 - a * a


def _forward_cached(params: NetworkParams, X: np.ndarray):
    pre, post = [], [X]
    a = X
    n_layers = len(params.weights)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = z if k == n_layers - 1 else _act(params.hidden_activation, z)
        post.append(a)
    return pre, post


def forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector or an (n, L) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatch(
            f"input has {X.shape[1]} features, network expects {params.weights[0].shape[1]}")
    _, post = _forward_cached(params, X)
    out = post[-1]
    return out[0] if single else out


def mse_loss(params: NetworkParams, X: np.ndarray, T: np.ndarray) -> float:
    """Mean over samples and output coordinates of the squared residual."""
    pred = forward(params, X)
    return float(np.mean((pred - T) ** 2))


def gradients(params: NetworkParams, batch_inputs: np.ndarray,
              batch_targets: np.ndarray):
    """Exact gradients of the batch MSE loss for every weight and bias."""
    X = np.atleast_2d(np.asarray(batch_inputs, dtype=float))
    T = np.atleast_2d(np.asarray(batch_targets, dtype=float))
    if X.shape[0] != T.shape[0]:
        raise ShapeMismatch("batch inputs and targets disagree on sample count")
    if T.shape[1] != params.weights[-1].shape[0]:
        raise ShapeMismatch(
            f"targets have {T.shape[1]} outputs, network produces {params.weights[-1].shape[0]}")
    pre, post = _forward_cached(params, X)
    n, p = T.shape
    delta = 2.0 * (post[-1] - T) / (n * p)
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for k in range(len(params.weights) - 1, -1, -1):
        grads_w[k] = delta.T @ post[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * _act_grad(
                params.hidden_activation, pre[k - 1], post[k])
    return grads_w, grads_b


def train_network(spec: NetworkSpec, config: TrainConfig, inputs: np.ndarray,
                  targets: np.ndarray):
    """Mini-batch training of the score-space network; deterministic per seed.

    Returns (NetworkParams, TrainLog).  When early stopping is configured the
    parameters at the best validation loss are returned; otherwise the final
    parameters.
    """
    X = np.asarray(inputs, dtype=float)
    T = np.asarray(targets, dtype=float)
    if X.ndim != 2 or T.ndim != 2 or X.shape[0] != T.shape[0]:
        raise ShapeMismatch("inputs must be (N, L) and targets (N, P) with matching N")
    if X.shape[0] < 2:
        raise ShapeMismatch("training needs N >= 2 samples")
    if X.shape[1] != spec.input_dim or T.shape[1] != spec.output_dim:
        raise ShapeMismatch(
            f"data dims ({X.shape[1]}, {T.shape[1]}) do not match spec "
            f"({spec.input_dim}, {spec.output_dim})")

    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    use_val = config.val_fraction > 0 and config.early_stop_patience is not None
    if use_val:
        n_val = max(1, int(round(config.val_fraction * n)))
        perm = rng.permutation(n)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        X_val, T_val = X[val_idx], T[val_idx]
        X_tr, T_tr = X[train_idx], T[train_idx]
    else:
        X_tr, T_tr = X, T
        X_val = T_val = None

    params = init_network(spec)
    state_m = [np.zeros_like(w) for w in params.weights] + [np.zeros_like(b) for b in params.biases]
    state_v = [np.zeros_like(w) for w in params.weights] + [np.zeros_like(b) for b in params.biases]
    step = 0
    log = TrainLog()
    best = (np.inf, None, None)
    n_tr = X_tr.shape[0]
    batch = min(config.batch_size, n_tr)

    for epoch in range(config.epochs):
        order = rng.permutation(n_tr)
        for lo in range(0, n_tr, batch):
            idx = order[lo:lo + batch]
            gw, gb = gradients(params, X_tr[idx], T_tr[idx])
            flat_params = params.weights + params.biases
            flat_grads = gw + gb
            step += 1
            for k, (theta, g) in enumerate(zip(flat_params, flat_grads)):
                if config.optimizer == "sgd":
                    theta -= config.learning_rate * g
                elif config.optimizer == "sgd_momentum":
                    state_m[k] = config.momentum * state_m[k] + g
                    theta -= config.learning_rate * state_m[k]
                else:
                    state_m[k] = config.adam_beta1 * state_m[k] + (1 - config.adam_beta1) * g
                    state_v[k] = config.adam_beta2 * state_v[k] + (1 - config.adam_beta2) * g * g
                    m_hat = state_m[k] / (1 - config.adam_beta1 ** step)
                    v_hat = state_v[k] / (1 - config.adam_beta2 ** step)
                    theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        train_loss = mse_loss(params, X_tr, T_tr)
        if not np.isfinite(train_loss):
            raise DivergenceDetected(f"training loss became non-finite at epoch {epoch}")
        log.train_loss.append(train_loss)
        if use_val:
            val_loss = mse_loss(params, X_val, T_val)
            log.val_loss.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, params.copy(), epoch)
            elif epoch - (best[2] if best[2] is not None else 0) >= config.early_stop_patience:
                break

    if use_val and best[1] is not None:
        log.best_epoch = best[2]
        return best[1], log
    return params, log


def fit_fflm(inputs: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> FflmParams:
    """Least-squares fit of the score-space linear map.

    ridge = 0 returns the minimal-norm solution when rank-deficient;
    ridge > 0 solves the Tikhonov-regularized normal equations.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    if X.shape[0] != T.shape[0]:
        raise ShapeMismatch("inputs and targets disagree on sample count")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge == 0:
        sol, *_ = np.linalg.lstsq(X, T, rcond=None)
    else:
        l = X.shape[1]
        sol = np.linalg.solve(X.T @ X + ridge * np.eye(l), X.T @ T)
    return FflmParams(sol.T)


def predict_fflm(params: FflmParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if len(x) != params.B.shape[1]:
            raise ShapeMismatch(f"input length {len(x)} != {params.B.shape[1]}")
        return params.B @ x
    return x @ params.B.T


def count_params(model) -> int:
    """Scalar parameter count of a NetworkSpec, NetworkParams or FflmParams."""
    if isinstance(model, NetworkSpec):
        dims = model.layer_dims
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
    if isinstance(model, NetworkParams):
        return sum(w.size for w in model.weights) + sum(b.size for b in model.biases)
    if isinstance(model, FflmParams):
        return int(model.B.size)
    raise TypeError(f"cannot count parameters of {type(model).__name__}")
