"""
Minimal neural substrate with exact gradients

Every layer caches what its backward pass needs during forward() and
accumulates parameter gradients into Parameter.grad during backward().
Shapes:
- Linear / BatchNorm1d / LeakyReLU / Dropout: (B, F)
- LSTM / BiLSTM: (B, T, D) in, final hidden state (B, H) out

All arithmetic is float64. Randomness (initialisation, dropout masks) comes
from generators handed in by the owning model.
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import BatchTooSmall

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


# ==================== Tensors & Modules ====================

class Parameter:
    """A trainable array with its gradient buffer"""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter(shape={self.shape})"


class Module:
    """
    Base class for layers and models

    Parameters, sub-modules and lists of sub-modules are discovered from
    instance attributes in definition order. Non-trainable arrays are
    declared by name in `buffer_names`.
    """

    buffer_names: Tuple[str, ...] = ()

    def __init__(self):
        self.training = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Parameter]:
        params = {}
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                params[prefix + name] = value
        for name, child in self.children():
            params.update(child.named_parameters(f"{prefix}{name}."))
        return params

    def parameters(self) -> List[Parameter]:
        return list(self.named_parameters().values())

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        buffers = {prefix + name: getattr(self, name) for name in self.buffer_names}
        for name, child in self.children():
            buffers.update(child.named_buffers(f"{prefix}{name}."))
        return buffers

    def named_modules(self, prefix: str = "") -> Dict[str, "Module"]:
        modules = {prefix.rstrip("."): self}
        for name, child in self.children():
            modules.update(child.named_modules(f"{prefix}{name}."))
        return modules

    def set_buffer(self, name: str, value: np.ndarray):
        owner, _, attr = name.rpartition(".")
        setattr(self.named_modules()[owner], attr, np.array(value, dtype=np.float64))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # ---------- state ----------

    def state_dict(self) -> Dict[str, Dict[str, list]]:
        return {
            "parameters": {name: p.value.tolist() for name, p in self.named_parameters().items()},
            "buffers": {name: np.asarray(b).tolist() for name, b in self.named_buffers().items()},
        }

    def load_state_dict(self, state: Dict[str, Dict[str, list]]):
        """
        Raises:
            KeyError: a parameter or buffer is missing
            ValueError: a stored array has the wrong shape
        """
        for name, p in self.named_parameters().items():
            value = np.array(state["parameters"][name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"Shape mismatch for {name}: {value.shape} != {p.shape}")
            p.value = value
            p.zero_grad()
        for name, current in self.named_buffers().items():
            value = np.array(state["buffers"][name], dtype=np.float64)
            if value.shape != np.shape(current):
                raise ValueError(f"Shape mismatch for buffer {name}: {value.shape} != {np.shape(current)}")
            self.set_buffer(name, value)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


# ==================== Feed-forward Layers ====================

class Linear(Module):
    """y = x @ W + b with W of shape (in, out); Kaiming-uniform init"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, leaky_slope: float = 0.2):
        super().__init__()
        gain = np.sqrt(2.0 / (1.0 + leaky_slope ** 2))
        bound = gain * np.sqrt(3.0 / in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (in_features, out_features)))
        bias_bound = 1.0 / np.sqrt(in_features)
        self.bias = Parameter(rng.uniform(-bias_bound, bias_bound, out_features))
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad):
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T


class BatchNorm1d(Module):
    """
    Batch normalization over (B, F)

    Training mode normalizes with the biased batch variance and folds the
    unbiased one into the running estimate; eval mode uses running stats.
    """

    buffer_names = ("running_mean", "running_var")

    def __init__(self, features: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.track_running_stats = True
        self._cache = None

    def forward(self, x):
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise BatchTooSmall(f"BatchNorm1d needs at least 2 samples in training mode, got {n}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if self.track_running_stats:
                self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
                self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, self.training)
        return x_hat * self.gamma.value + self.beta.value

    def backward(self, grad):
        x_hat, inv_std, training = self._cache
        self.gamma.grad += (grad * x_hat).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        d_hat = grad * self.gamma.value
        if not training:
            return d_hat * inv_std
        n = grad.shape[0]
        return inv_std / n * (n * d_hat - d_hat.sum(axis=0) - x_hat * (d_hat * x_hat).sum(axis=0))


@contextmanager
def frozen_statistics(module: Module) -> Iterator[Module]:
    """Batch norms inside module keep normalizing per batch but stop updating running stats"""
    norms = [m for m in module.named_modules().values() if isinstance(m, BatchNorm1d)]
    previous = [m.track_running_stats for m in norms]
    for m in norms:
        m.track_running_stats = False
    try:
        yield module
    finally:
        for m, flag in zip(norms, previous):
            m.track_running_stats = flag


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope
        self._positive = None

    def forward(self, x):
        self._positive = x > 0
        return np.where(self._positive, x, self.slope * x)

    def backward(self, grad):
        return np.where(self._positive, grad, self.slope * grad)


class Dropout(Module):
    """Inverted dropout: kept units scale by 1/(1 - rate) in training"""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"Dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._scale = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._scale = None
            return x
        self._scale = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._scale

    def backward(self, grad):
        return grad if self._scale is None else grad * self._scale


# ==================== Recurrent Layers ====================

def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


class LSTM(Module):
    """
    Single-direction LSTM returning the final hidden state

    Gate blocks are ordered (input, forget, cell, output) along the 4H axis.
    Input kernel uniform in ±1/sqrt(H), recurrent kernel orthogonal per gate,
    forget-gate bias 1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        bound = 1.0 / np.sqrt(H)
        self.w_input = Parameter(rng.uniform(-bound, bound, (input_size, 4 * H)))
        self.w_hidden = Parameter(np.hstack([orthogonal(rng, H) for _ in range(4)]))
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0
        self.bias = Parameter(bias)
        self._steps: List[tuple] = []

    def forward(self, x):
        B, T, _ = x.shape
        H = self.hidden_size
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        self._steps = []
        for t in range(T):
            z = x[:, t] @ self.w_input.value + h @ self.w_hidden.value + self.bias.value
            i = expit(z[:, :H])
            f = expit(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = expit(z[:, 3 * H:])
            c_next = f * c + i * g
            tanh_c = np.tanh(c_next)
            self._steps.append((x[:, t], h, c, i, f, g, o, tanh_c))
            h = o * tanh_c
            c = c_next
        return h

    def backward(self, grad):
        B = grad.shape[0]
        T = len(self._steps)
        dx = np.zeros((B, T, self.input_size))
        dh = grad
        dc = np.zeros_like(grad)
        for t in reversed(range(T)):
            x_t, h_prev, c_prev, i, f, g, o, tanh_c = self._steps[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            self.w_input.grad += x_t.T @ dz
            self.w_hidden.grad += h_prev.T @ dz
            self.bias.grad += dz.sum(axis=0)
            dx[:, t] = dz @ self.w_input.value.T
            dh = dz @ self.w_hidden.value.T
            dc = dc * f
        return dx


class BiLSTM(Module):
    """
    Bi-directional LSTM: hidden_size/2 per direction, output is the
    concatenation [forward final state, backward final state]
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        if hidden_size % 2:
            raise ValueError(f"BiLSTM hidden_size must be even, got {hidden_size}")
        self.hidden_size = hidden_size
        self.forward_lstm = LSTM(input_size, hidden_size // 2, rng)
        self.backward_lstm = LSTM(input_size, hidden_size // 2, rng)

    def forward(self, x):
        return np.concatenate([self.forward_lstm.forward(x), self.backward_lstm.forward(x[:, ::-1])], axis=1)

    def backward(self, grad):
        half = self.hidden_size // 2
        dx_forward = self.forward_lstm.backward(grad[:, :half])
        dx_backward = self.backward_lstm.backward(grad[:, half:])
        return dx_forward + dx_backward[:, ::-1]


# ==================== Optimizer ====================

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, values: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(v) for v in values], v=[np.zeros_like(v) for v in values])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> Sequence[np.ndarray]:
    """Update params in place with one bias-corrected Adam step"""
    b1, b2 = betas
    state.t += 1
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for value, grad, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params


class Adam:
    """Adam over a fixed list of Parameters"""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros_like([p.value for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: Optional[float] = None):
        adam_step([p.value for p in self.params], [p.grad for p in self.params],
                  self.state, self.lr if lr is None else lr, self.betas, self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.state.t,
            "m": [m.tolist() for m in self.state.m],
            "v": [v.tolist() for v in self.state.v],
        }

    def load_state_dict(self, data: dict):
        if len(data["m"]) != len(self.params) or len(data["v"]) != len(self.params):
            raise ValueError("Optimizer state does not match the parameter list")
        self.state = AdamState(
            m=[np.array(m, dtype=np.float64).reshape(p.shape) for m, p in zip(data["m"], self.params)],
            v=[np.array(v, dtype=np.float64).reshape(p.shape) for v, p in zip(data["v"], self.params)],
            t=int(data["t"]),
        )


# ==================== Gradient Checking ====================

def numeric_gradient(f: Callable[[], float], param: Parameter, eps: float = 1e-5) -> np.ndarray:
    """Central differences of f with respect to every element of param"""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + eps
        plus = f()
        flat[k] = original - eps
        minus = f()
        flat[k] = original
        grad.reshape(-1)[k] = (plus - minus) / (2.0 * eps)
    return grad


def grad_check(
    f: Callable[[], float],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """
    Max relative error between analytic and central-difference gradients

    f() must return the scalar loss and accumulate its gradient into each
    Parameter.grad. Relative error is |a - n| / max(|a|, |n|, floor).

    Returns:
        The largest relative error over every element of every parameter
    """
    for p in params:
        p.zero_grad()
    f()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        n = numeric_gradient(f, p, eps)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))

    for p, a in zip(params, analytic):
        p.grad = a
    return worst
