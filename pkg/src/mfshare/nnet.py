"""Dense feed-forward networks with hand-written backpropagation and Adam.

All parameters of a network live in one flat vector ``theta``; weight matrices
and bias vectors are views into it. That keeps the optimizer to a handful of
vector operations per step, which matters at 5000 full-batch epochs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .distributions import make_rng
from .errors import DataError, ParameterError, SearchError, ShapeError, TrainingError
from .seeding import derive_seed

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_ACTIVATIONS = ("tanh", "relu", "identity")


class DenseNet:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]``.

    Inputs are normalized as ``(x - in_center) / in_half`` before the first
    layer and outputs are mapped back with ``y * out_half + out_center``.
    """

    def __init__(
        self,
        sizes,
        activation: str = "tanh",
        output_activation: str = "identity",
        theta: np.ndarray | None = None,
        in_center=None,
        in_half=None,
        out_center=None,
        out_half=None,
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ParameterError(f"invalid layer sizes {sizes}")
        if activation not in _ACTIVATIONS or output_activation not in _ACTIVATIONS:
            raise ParameterError("unknown activation")
        self.sizes = sizes
        self.activation = activation
        self.output_activation = output_activation
        counts = [a * b + b for a, b in zip(sizes[:-1], sizes[1:])]
        self.n_params = sum(counts)
        self._offsets = np.cumsum([0] + counts)
        self._bind(np.zeros(self.n_params) if theta is None else np.asarray(theta, dtype=float))
        self.in_center = np.zeros(sizes[0]) if in_center is None else np.asarray(in_center, float)
        self.in_half = np.ones(sizes[0]) if in_half is None else np.asarray(in_half, float)
        self.out_center = np.zeros(sizes[-1]) if out_center is None else np.asarray(out_center, float)
        self.out_half = np.ones(sizes[-1]) if out_half is None else np.asarray(out_half, float)
        if np.any(self.in_half == 0) or np.any(self.out_half == 0):
            raise ParameterError("normalization scales must be nonzero")

    @classmethod
    def create(cls, sizes, activation="tanh", output_activation="identity", seed: int = 0):
        """Network with weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
        net = cls(sizes, activation, output_activation)
        rng = make_rng(seed)
        for W, b in net.layers:
            bound = 1.0 / math.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return net

    def _bind(self, theta: np.ndarray) -> None:
        if theta.shape != (self.n_params,):
            raise ShapeError(f"theta must have shape ({self.n_params},)")
        self.theta = theta
        self.layers = []
        k = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[k : k + a * b].reshape(a, b)
            k += a * b
            bias = theta[k : k + b]
            k += b
            self.layers.append((W, bias))

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    def set_normalization(self, inputs: np.ndarray, targets: np.ndarray | None = None) -> None:
        """Map the data range of inputs (and targets) onto ``[-1, 1]``."""
        self.in_center, self.in_half = _range_map(inputs)
        if targets is not None:
            self.out_center, self.out_half = _range_map(targets)

    def normalize(self, X):
        return (np.asarray(X, float) - self.in_center) / self.in_half

    def denormalize(self, Z):
        return np.asarray(Z, float) * self.in_half + self.in_center

    def _act(self, A, last):
        kind = self.output_activation if last else self.activation
        if kind == "tanh":
            return np.tanh(A)
        if kind == "relu":
            return np.maximum(A, 0.0)
        return A

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.d_in:
            raise ShapeError(f"expected input dimension {self.d_in}, got shape {X.shape}")
        return X2, single

    def forward(self, X):
        X2, single = self._check(X)
        Z = (X2 - self.in_center) / self.in_half
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            Z = self._act(Z @ W + b, i == last)
        Y = Z * self.out_half + self.out_center
        return Y[0] if single else Y

    __call__ = forward

    def forward_cache(self, X):
        X2, _ = self._check(X)
        Z = (X2 - self.in_center) / self.in_half
        outs = [Z]
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            Z = self._act(Z @ W + b, i == last)
            outs.append(Z)
        return Z * self.out_half + self.out_center, outs

    def backward(self, cache, g_out: np.ndarray, need_params: bool = True):
        """Reverse pass. Returns ``(flat parameter gradient or None, input gradient)``."""
        outs = cache
        g = np.asarray(g_out, float) * self.out_half
        grad = np.empty(self.n_params) if need_params else None
        offsets = self._offsets
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            W, _ = self.layers[i]
            Z = outs[i + 1]
            kind = self.output_activation if i == last else self.activation
            if kind == "tanh":
                g = g * (1.0 - Z * Z)
            elif kind == "relu":
                g = g * (Z > 0.0)
            if need_params:
                k = offsets[i]
                a, b = W.shape
                grad[k : k + a * b] = (outs[i].T @ g).ravel()
                grad[k + a * b : k + a * b + b] = g.sum(axis=0)
            g = g @ W.T
        return grad, g / self.in_half

    def grad_input(self, X):
        """Gradient of a scalar-output network with respect to its raw input."""
        if self.d_out != 1:
            raise ShapeError("grad_input requires a scalar-output network")
        X2, single = self._check(X)
        _, cache = self.forward_cache(X2)
        _, gx = self.backward(cache, np.ones((X2.shape[0], 1)), need_params=False)
        return gx[0] if single else gx

    def copy(self) -> "DenseNet":
        return DenseNet(
            self.sizes, self.activation, self.output_activation, self.theta.copy(),
            self.in_center.copy(), self.in_half.copy(), self.out_center.copy(), self.out_half.copy(),
        )

    def zero_output_layer(self) -> None:
        W, b = self.layers[-1]
        W[...] = 0.0
        b[...] = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "sizes": self.sizes,
            "activation": self.activation,
            "output_activation": self.output_activation,
            "weights": [W.tolist() for W, _ in self.layers],
            "biases": [b.tolist() for _, b in self.layers],
            "in_center": self.in_center.tolist(),
            "in_half": self.in_half.tolist(),
            "out_center": self.out_center.tolist(),
            "out_half": self.out_half.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DenseNet":
        theta = np.concatenate(
            [np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in zip(d["weights"], d["biases"])]
        )
        return cls(d["sizes"], d["activation"], d["output_activation"], theta,
                   d["in_center"], d["in_half"], d["out_center"], d["out_half"])


def _range_map(data):
    data = np.asarray(data, float)
    if data.ndim == 1:
        data = data[:, None]
    lo, hi = data.min(axis=0), data.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half = np.where(half > 0, half, 1.0)
    return center, half


@dataclass
class TrainConfig:
    lr: float = 1e-3
    scheduler: float = 1.0
    epochs: int = 5000
    loss: str = "l1"
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("learning rate must be positive")
        if not 0 < self.scheduler <= 1:
            raise ParameterError("scheduler factor must lie in (0, 1]")
        if not 0 <= self.validation_fraction < 1:
            raise ParameterError("validation fraction must lie in [0, 1)")
        if self.loss not in ("l1", "mse", "nll"):
            raise ParameterError(f"unknown loss {self.loss!r}")
        if int(self.epochs) < 0:
            raise ParameterError("epochs must be non-negative")


def adam_minimize(
    theta: np.ndarray,
    loss_and_grad: Callable[[], tuple[float, np.ndarray]],
    epochs: int,
    lr: float,
    scheduler: float = 1.0,
) -> np.ndarray:
    """Full-batch Adam on ``theta`` in place; ``loss_and_grad`` reads ``theta``.

    Returns the loss history (one entry per epoch, evaluated before the step).
    """
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    history = np.empty(epochs)
    b1t = b2t = 1.0
    for t in range(epochs):
        loss, g = loss_and_grad()
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            raise TrainingError(f"non-finite loss at epoch {t}", epoch=t, history=history[:t].copy())
        history[t] = loss
        b1t *= ADAM_BETA1
        b2t *= ADAM_BETA2
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        step = lr * scheduler**t * math.sqrt(1.0 - b2t) / (1.0 - b1t)
        theta -= step * m / (np.sqrt(v) + ADAM_EPS * math.sqrt(1.0 - b2t))
    return history


def split_indices(n: int, fraction: float, seed: int):
    """Shuffled train/validation index split; validation is empty for ``fraction == 0``."""
    perm = make_rng(seed).permutation(n)
    n_val = int(round(fraction * n)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def regression_loss(pred, target, kind):
    diff = pred - target
    if kind == "l1":
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class TrainResult:
    net: DenseNet
    history: np.ndarray
    train_loss: float
    val_loss: float

    def summary(self) -> dict[str, Any]:
        h = self.history
        return {
            "epochs": int(h.size),
            "initial_loss": float(h[0]) if h.size else None,
            "final_loss": self.train_loss,
            "val_loss": self.val_loss,
        }


def train(net: DenseNet, inputs, targets, cfg: TrainConfig) -> TrainResult:
    """Fit ``net`` (a copy) to ``targets`` by full-batch Adam on the L1 or MSE loss."""
    X = np.atleast_2d(np.asarray(inputs, float))
    Y = np.asarray(targets, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise DataError("train: empty data")
    if X.shape[0] != Y.shape[0]:
        raise DataError("train: inputs and targets have different row counts")
    if cfg.loss == "nll":
        raise ParameterError("train: the nll loss is only used by flow fitting")
    tr, va = split_indices(X.shape[0], cfg.validation_fraction, cfg.seed)
    net = net.copy()
    Xt, Yt = X[tr], Y[tr]

    def loss_and_grad():
        pred, cache = net.forward_cache(Xt)
        loss, g = regression_loss(pred, Yt, cfg.loss)
        grad, _ = net.backward(cache, g)
        return loss, grad

    history = adam_minimize(net.theta, loss_and_grad, int(cfg.epochs), cfg.lr, cfg.scheduler)
    train_loss = regression_loss(net.forward(Xt), Yt, cfg.loss)[0]
    if va.size:
        val_loss = regression_loss(net.forward(X[va]), Y[va], cfg.loss)[0]
    else:
        val_loss = train_loss
    return TrainResult(net, history, train_loss, val_loss)


@dataclass
class SearchSpace:
    layers: tuple[int, int] = (1, 4)
    neurons: tuple[int, int] = (1, 16)
    lr: tuple[float, float] = (1e-4, 1e-2)
    scheduler: tuple[float, float] = (0.999, 0.9999)
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("layers", "neurons", "lr", "scheduler"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"search range {name} is empty")
        if self.lr[0] <= 0:
            raise ParameterError("learning-rate range must be positive")
        if int(self.trials) < 1:
            raise ParameterError("at least one trial required")

    def draw(self, rng: np.random.Generator) -> dict[str, Any]:
        lo, hi = np.log(self.lr)
        return {
            "layers": int(rng.integers(self.layers[0], self.layers[1] + 1)),
            "neurons": int(rng.integers(self.neurons[0], self.neurons[1] + 1)),
            "lr": float(np.exp(rng.uniform(lo, hi))),
            "scheduler": float(rng.uniform(*self.scheduler)),
        }

    def to_dict(self):
        return asdict(self)


@dataclass
class SearchResult:
    best_params: dict[str, Any]
    best_value: float
    best_payload: Any
    trials: list[dict[str, Any]] = field(default_factory=list)


def random_search(space: SearchSpace, objective: Callable[[dict, int], tuple[float, Any]]) -> SearchResult:
    """Seeded random search; ``objective(params, seed)`` returns ``(validation loss, payload)``.

    A trial whose objective raises is logged as failed and skipped.
    """
    rng = make_rng(space.seed)
    best = None
    log = []
    for i in range(int(space.trials)):
        params = space.draw(rng)
        trial_seed = derive_seed(space.seed, "trial", i)
        try:
            value, payload = objective(params, trial_seed)
            if not np.isfinite(value):
                raise TrainingError("non-finite validation loss")
        except Exception as exc:  # noqa: BLE001 - a failed trial must not stop the search
            log.append({"trial": i, "params": params, "status": "failed", "error": str(exc)})
            continue
        log.append({"trial": i, "params": params, "status": "ok", "value": float(value)})
        if best is None or value < best[1]:
            best = (params, float(value), payload)
    if best is None:
        raise SearchError("every search trial failed")
    return SearchResult(best[0], best[1], best[2], log)


def hidden_sizes(params: dict[str, Any]) -> list[int]:
    return [int(params["neurons"])] * int(params["layers"])


def fit_surrogate(inputs, targets, space: SearchSpace, epochs: int, activation: str = "relu",
                  validation_fraction: float = 0.2) -> tuple[DenseNet, SearchResult]:
    """Scalar regression surrogate with L1 loss, chosen by random search on validation loss."""
    X = np.atleast_2d(np.asarray(inputs, float))
    y = np.asarray(targets, float).reshape(-1, 1)

    def objective(params, seed):
        net = DenseNet.create([X.shape[1], *hidden_sizes(params), 1], activation, "identity", seed)
        net.set_normalization(X, y)
        cfg = TrainConfig(params["lr"], params["scheduler"], epochs, "l1", validation_fraction, seed)
        res = train(net, X, y, cfg)
        return res.val_loss, res

    result = random_search(space, objective)
    return result.best_payload.net, result
