"""Minimal dense neural-network engine on numpy.

Provides the split policy network (a small client-side stack and a larger
server-side stack, each with its own action head), a centralized action-value
network, reverse-mode gradients for each forward path, an adaptive-moment
optimizer, and a plain-text checkpoint format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

PROB_FLOOR = 1e-12

CLIENT = "client"
SERVER = "server"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_of(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats; 0 log 0 treated as 0."""
    p = np.asarray(probs)
    logp = np.where(p > 0, np.log(np.maximum(p, PROB_FLOOR)), 0.0)
    return -(p * logp).sum(axis=-1)


@dataclass
class Distribution:
    """Categorical action distribution."""

    probs: np.ndarray

    @property
    def entropy(self) -> float:
        return float(entropy_of(self.probs))

    def log_prob(self, action: int) -> float:
        return float(np.log(max(float(self.probs[action]), PROB_FLOOR)))

    def sample(self, rng: np.random.Generator) -> tuple[int, float]:
        u = rng.random()
        action = int(np.searchsorted(np.cumsum(self.probs), u))
        action = min(action, len(self.probs) - 1)
        return action, self.log_prob(action)

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def sample(dist: Distribution, rng: np.random.Generator) -> tuple[int, float]:
    return dist.sample(rng)


class DenseNet:
    """Fully connected stack: tanh on every layer except an identity output.

    With out_tanh=True the final layer is tanh as well, which is how trunk
    stacks producing intermediate features are built; heads use identity.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, out_tanh: bool = False):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.out_tanh = out_tanh
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Batched forward pass; returns (output, cache for backward)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            use_tanh = i < last or self.out_tanh
            y = np.tanh(z) if use_tanh else z
            cache.append((h, y, use_tanh))
            h = y
        return h, cache

    def backward(self, cache: list, dy: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Reverse-accumulate (dW, db) per layer plus the input gradient."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        grad = np.atleast_2d(dy)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, y_out, used_tanh = cache[i]
            dz = grad * (1.0 - y_out**2) if used_tanh else grad
            grads[i] = (dz.T @ h_in, dz.sum(axis=0))
            grad = dz @ self.weights[i]
        return grads, grad

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def grads_as_params(self, layer_grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
        out = []
        for dw, db in layer_grads:
            out.append(dw)
            out.append(db)
        return out


class SplitActor:
    """Policy split into a client-side small stack and a server-side stack.

    The client consumes the observation and emits both intermediate features
    and client-head logits. The server consumes the client features and emits
    its own logits. `split_index` is how many hidden widths belong to the
    client; hidden_dims[split_index:] belong to the server.
    """

    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        hidden_dims: Sequence[int],
        split_index: int,
        rng: np.random.Generator,
    ):
        if not (1 <= split_index < len(hidden_dims)):
            raise ValueError("split_index must leave at least one layer on each side")
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_dims = list(hidden_dims)
        self.split_index = split_index
        client_dims = [obs_dim] + self.hidden_dims[:split_index]
        server_dims = [client_dims[-1]] + self.hidden_dims[split_index:]
        self.client_trunk = DenseNet(client_dims, rng, out_tanh=True)
        self.client_head = DenseNet([client_dims[-1], n_actions], rng)
        self.server_trunk = DenseNet(server_dims, rng, out_tanh=True)
        self.server_head = DenseNet([server_dims[-1], n_actions], rng)
        self.server_forward_calls = 0

    # --- single-observation inference ---

    def forward_client(self, obs: np.ndarray) -> tuple[np.ndarray, Distribution]:
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"expected observation of shape ({self.obs_dim},), got {obs.shape}")
        features, _ = self.client_trunk.forward(obs)
        logits, _ = self.client_head.forward(features)
        return features[0], Distribution(softmax(logits)[0])

    def forward_server(self, features: np.ndarray) -> Distribution:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.server_trunk.dims[0]:
            raise ValueError(
                f"expected features of width {self.server_trunk.dims[0]}, got {features.shape}"
            )
        self.server_forward_calls += 1
        hidden, _ = self.server_trunk.forward(features)
        logits, _ = self.server_head.forward(hidden)
        return Distribution(softmax(logits)[0])

    # --- batched path forward/backward for training ---

    def path_logits(self, obs: np.ndarray, path: str) -> tuple[np.ndarray, dict]:
        """Logits of one path for a batch, with caches for path_backward."""
        features, c_trunk = self.client_trunk.forward(obs)
        if path == CLIENT:
            logits, c_head = self.client_head.forward(features)
            return logits, {"trunk": c_trunk, "head": c_head}
        if path == SERVER:
            hidden, c_server = self.server_trunk.forward(features)
            logits, c_head = self.server_head.forward(hidden)
            return logits, {"trunk": c_trunk, "server": c_server, "head": c_head}
        raise ValueError(f"unknown path {path!r}")

    def path_backward(self, cache: dict, dlogits: np.ndarray, path: str) -> dict[str, list[np.ndarray]]:
        """Parameter gradients of one path keyed by component name.

        The client path touches client trunk and client head only; the server
        path touches server head, server trunk, and the client trunk, but
        never the client head.
        """
        if path == CLIENT:
            head_grads, dfeat = self.client_head.backward(cache["head"], dlogits)
            trunk_grads, _ = self.client_trunk.backward(cache["trunk"], dfeat)
            return {
                "client_trunk": self.client_trunk.grads_as_params(trunk_grads),
                "client_head": self.client_head.grads_as_params(head_grads),
            }
        if path == SERVER:
            head_grads, dhidden = self.server_head.backward(cache["head"], dlogits)
            server_grads, dfeat = self.server_trunk.backward(cache["server"], dhidden)
            trunk_grads, _ = self.client_trunk.backward(cache["trunk"], dfeat)
            return {
                "client_trunk": self.client_trunk.grads_as_params(trunk_grads),
                "server_trunk": self.server_trunk.grads_as_params(server_grads),
                "server_head": self.server_head.grads_as_params(head_grads),
            }
        raise ValueError(f"unknown path {path!r}")

    def components(self) -> dict[str, DenseNet]:
        return {
            "client_trunk": self.client_trunk,
            "client_head": self.client_head,
            "server_trunk": self.server_trunk,
            "server_head": self.server_head,
        }

    def param_count(self, mode: str) -> int:
        """Parameters evaluated on a path: 'client' or 'client+server'.

        The server path runs after the client produced its logits, so the
        full-path count includes every client parameter as well.
        """
        client = self.client_trunk.param_count() + self.client_head.param_count()
        if mode == CLIENT:
            return client
        if mode == "client+server":
            return client + self.server_trunk.param_count() + self.server_head.param_count()
        raise ValueError(f"unknown mode {mode!r}")


def param_count(actor: SplitActor, mode: str) -> int:
    return actor.param_count(mode)


class Critic:
    """Centralized action-value network over joint observation + one-hot joint action."""

    def __init__(self, input_dim: int, hidden_dims: Sequence[int], rng: np.random.Generator):
        self.input_dim = input_dim
        self.net = DenseNet([input_dim] + list(hidden_dims) + [1], rng)

    def value(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.net.forward(x)
        return y[:, 0]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        y, cache = self.net.forward(x)
        return y[:, 0], cache

    def backward(self, cache: list, dvalue: np.ndarray) -> list[np.ndarray]:
        grads, _ = self.net.backward(cache, np.asarray(dvalue).reshape(-1, 1))
        return self.net.grads_as_params(grads)

    def param_count(self) -> int:
        return self.net.param_count()


class Adam:
    """Adaptive-moment optimizer updating a fixed parameter list in place."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.steps = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.steps += 1
        b1c = 1.0 - self.beta1**self.steps
        b2c = 1.0 - self.beta2**self.steps
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def grad_check(
    params: list[np.ndarray],
    loss_and_grads: Callable[[], tuple[float, list[np.ndarray]]],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_and_grads must evaluate the loss at the current parameters and return
    analytic gradients aligned with `params`. When max_entries is given, only
    a random subset of coordinates per tensor is probed.
    """
    _, grads = loss_and_grads()
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        idx = np.arange(flat_p.size)
        if max_entries is not None and flat_p.size > max_entries:
            assert rng is not None
            idx = rng.choice(flat_p.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + step
            up, _ = loss_and_grads()
            flat_p[i] = orig - step
            down, _ = loss_and_grads()
            flat_p[i] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(numeric) + abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst


# --- checkpoint format ---
# Line 1: "MSRL-CKPT v1". Then per tensor: "name rows cols" followed by `rows`
# lines of `cols` decimal floats. %.17g preserves float64 exactly.

CKPT_MAGIC = "MSRL-CKPT v1"


def save_checkpoint(path: str, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CKPT_MAGIC + "\n")
        for name, array in tensors:
            mat = np.atleast_2d(np.asarray(array, dtype=float))
            fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        out: dict[str, np.ndarray] = {}
        while True:
            header = fh.readline()
            if not header:
                break
            if not header.strip():
                continue
            name, rows_s, cols_s = header.split()
            rows, cols = int(rows_s), int(cols_s)
            data = np.empty((rows, cols))
            for r in range(rows):
                fields = fh.readline().split()
                if len(fields) != cols:
                    raise ValueError(f"tensor {name}: row {r} has {len(fields)} values, wanted {cols}")
                data[r] = [float(x) for x in fields]
            out[name] = data
    return out
