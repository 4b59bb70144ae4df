"""Minimal differentiable building blocks with hand-written gradients.

Feed-forward nets, a gated recurrent (LSTM-style) cell with a scalar head,
and an adaptive-moment optimizer. No autodiff graph: every forward returns a
cache and every backward consumes it, accumulating into ParamTensor.grad.
All math is float64 so finite-difference checks are reliable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import StructuralError, LifecycleError, TrainingFault


@dataclass
class ParamTensor:
    """A named parameter: flat value/grad storage plus its logical shape."""

    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    grad: np.ndarray

    def __post_init__(self) -> None:
        n = int(np.prod(self.shape))
        if self.values.shape != (n,) or self.grad.shape != (n,):
            raise StructuralError(
                f"{self.name}: flat storage must have length {n}, "
                f"got values {self.values.shape}, grad {self.grad.shape}"
            )

    @classmethod
    def zeros(cls, name: str, shape: Sequence[int]) -> "ParamTensor":
        n = int(np.prod(shape))
        return cls(name, tuple(shape), np.zeros(n), np.zeros(n))

    @classmethod
    def uniform(
        cls, name: str, shape: Sequence[int], rng: np.random.Generator, limit: float
    ) -> "ParamTensor":
        n = int(np.prod(shape))
        return cls(name, tuple(shape), rng.uniform(-limit, limit, size=n), np.zeros(n))

    @property
    def array(self) -> np.ndarray:
        """Shaped view onto the flat values; writes propagate."""
        return self.values.reshape(self.shape)

    @property
    def grad_array(self) -> np.ndarray:
        return self.grad.reshape(self.shape)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def copy(self, name: str | None = None) -> "ParamTensor":
        return ParamTensor(
            name or self.name, self.shape, self.values.copy(), np.zeros_like(self.grad)
        )


class Linear:
    """Affine layer y = x W^T + b operating on (batch, in) matrices."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        limit = 1.0 / np.sqrt(d_in)
        self.w = ParamTensor.uniform(f"{name}.w", (d_out, d_in), rng, limit)
        self.b = ParamTensor.zeros(f"{name}.b", (d_out,))

    def params(self) -> list[ParamTensor]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x @ self.w.array.T + self.b.array, x

    def backward(self, cache: np.ndarray, dy: np.ndarray) -> np.ndarray:
        x = cache
        self.w.grad_array[...] += dy.T @ x
        self.b.grad_array[...] += dy.sum(axis=0)
        return dy @ self.w.array


@dataclass
class MLPCache:
    layer_inputs: list[np.ndarray]
    relu_masks: list[np.ndarray]
    kink_gap: float
    consumed: bool = False


class MLP:
    """Fully-connected net: affine layers with rectifiers between them and a
    linear output layer."""

    def __init__(self, name: str, dims: Sequence[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise StructuralError("MLP needs at least input and output dims")
        self.name = name
        self.dims = tuple(dims)
        self.layers = [
            Linear(f"{name}.l{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]

    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MLPCache]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.dims[0]:
            raise StructuralError(
                f"{self.name}: input width {x.shape[1]} != {self.dims[0]}"
            )
        inputs, masks = [], []
        kink_gap = np.inf
        for i, layer in enumerate(self.layers):
            y, cache_x = layer.forward(x)
            inputs.append(cache_x)
            if i < len(self.layers) - 1:
                kink_gap = min(kink_gap, float(np.min(np.abs(y))) if y.size else np.inf)
                mask = y > 0
                masks.append(mask)
                x = y * mask
            else:
                x = y
        out = x[0] if squeeze else x
        return out, MLPCache(inputs, masks, kink_gap)

    def backward(self, cache: MLPCache, dy: np.ndarray) -> np.ndarray:
        if cache.consumed:
            raise LifecycleError(f"{self.name}: cache already consumed")
        cache.consumed = True
        dy = np.asarray(dy, dtype=float)
        if dy.ndim == 1 and self.dims[-1] == dy.shape[0] and cache.layer_inputs[0].shape[0] == 1:
            dy = dy[None, :]
        for i in reversed(range(len(self.layers))):
            if i < len(self.layers) - 1:
                dy = dy * cache.relu_masks[i]
            dy = self.layers[i].backward(cache.layer_inputs[i], dy)
        return dy


@dataclass(frozen=True)
class RecurrentState:
    """Hidden and cell vectors of the gated recurrent cell."""

    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self) -> None:
        if self.hidden.shape != self.cell.shape:
            raise StructuralError("hidden and cell sizes must match")
        if not (np.all(np.isfinite(self.hidden)) and np.all(np.isfinite(self.cell))):
            raise StructuralError("recurrent state must be finite")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LSTMStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


class LSTMCell:
    """Standard gated cell (input/forget/output gates, candidate cell) with a
    scalar output head. Gate order in the stacked weights: i, f, g, o.
    """

    def __init__(self, name: str, d_in: int, hidden: int, rng: np.random.Generator):
        self.name = name
        self.d_in = d_in
        self.hidden = hidden
        limit = 1.0 / np.sqrt(hidden)
        self.wx = ParamTensor.uniform(f"{name}.wx", (4 * hidden, d_in), rng, limit)
        self.wh = ParamTensor.uniform(f"{name}.wh", (4 * hidden, hidden), rng, limit)
        self.b = ParamTensor.zeros(f"{name}.b", (4 * hidden,))
        # forget-gate bias starts at 1 so early training keeps cell memory
        self.b.array[hidden : 2 * hidden] = 1.0
        self.w_out = ParamTensor.uniform(f"{name}.w_out", (hidden,), rng, limit)
        self.b_out = ParamTensor.zeros(f"{name}.b_out", (1,))

    def params(self) -> list[ParamTensor]:
        return [self.wx, self.wh, self.b, self.w_out, self.b_out]

    def initial_state(self, batch: int | None = None) -> RecurrentState:
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return RecurrentState(np.zeros(shape), np.zeros(shape))

    def step(
        self, x: np.ndarray, state: RecurrentState
    ) -> tuple[np.ndarray, RecurrentState, LSTMStepCache]:
        """One gated update. Accepts a single (d_in,) row or a (B, d_in)
        batch; the scalar head output matches (float vs (B,))."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        h_prev = np.atleast_2d(state.hidden)
        c_prev = np.atleast_2d(state.cell)
        if x.shape[1] != self.d_in:
            raise StructuralError(f"{self.name}: input width {x.shape[1]} != {self.d_in}")
        if h_prev.shape[1] != self.hidden:
            raise StructuralError(f"{self.name}: state width {h_prev.shape[1]} != {self.hidden}")
        H = self.hidden
        z = x @ self.wx.array.T + h_prev @ self.wh.array.T + self.b.array
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        y = h @ self.w_out.array + self.b_out.array[0]
        cache = LSTMStepCache(x, h_prev, c_prev, i, f, g, o, c, tanh_c, h)
        if squeeze:
            return float(y[0]), RecurrentState(h[0], c[0]), cache
        return y, RecurrentState(h, c), cache

    def backward_step(
        self,
        cache: LSTMStepCache,
        dy: np.ndarray,
        dh_next: np.ndarray | None = None,
        dc_next: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Backprop one step. dy is the scalar-head upstream gradient (B,);
        dh_next/dc_next come from the following step. Returns (dx, dh_prev,
        dc_prev)."""
        dy = np.atleast_1d(np.asarray(dy, dtype=float))
        B = cache.h.shape[0]
        if dh_next is None:
            dh_next = np.zeros_like(cache.h)
        if dc_next is None:
            dc_next = np.zeros_like(cache.c)
        self.w_out.grad_array[...] += cache.h.T @ dy
        self.b_out.grad_array[...] += dy.sum()
        dh = dy[:, None] * self.w_out.array + dh_next
        do = dh * cache.tanh_c
        dc = dh * cache.o * (1.0 - cache.tanh_c**2) + dc_next
        df = dc * cache.c_prev
        di = dc * cache.g
        dg = dc * cache.i
        dc_prev = dc * cache.f
        dz = np.concatenate(
            [
                di * cache.i * (1.0 - cache.i),
                df * cache.f * (1.0 - cache.f),
                dg * (1.0 - cache.g**2),
                do * cache.o * (1.0 - cache.o),
            ],
            axis=1,
        )
        self.wx.grad_array[...] += dz.T @ cache.x
        self.wh.grad_array[...] += dz.T @ cache.h_prev
        self.b.grad_array[...] += dz.sum(axis=0)
        dx = dz @ self.wx.array
        dh_prev = dz @ self.wh.array
        return dx, dh_prev, dc_prev


@dataclass
class OptimizerState:
    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float


class Adam:
    """Adaptive-moment optimizer with bias correction; zeroes grads after
    each update."""

    def __init__(
        self,
        params: Sequence[ParamTensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("betas must be in (0, 1)")
        self.params = list(params)
        self.state = OptimizerState(
            step=0,
            first_moment={p.name: np.zeros_like(p.values) for p in self.params},
            second_moment={p.name: np.zeros_like(p.values) for p in self.params},
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )

    def step(self) -> None:
        s = self.state
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingFault(f"non-finite gradient in {p.name}")
        s.step += 1
        bc1 = 1.0 - s.beta1**s.step
        bc2 = 1.0 - s.beta2**s.step
        for p in self.params:
            m = s.first_moment[p.name]
            v = s.second_moment[p.name]
            m *= s.beta1
            m += (1.0 - s.beta1) * p.grad
            v *= s.beta2
            v += (1.0 - s.beta2) * p.grad**2
            p.values -= s.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    loss_fn: Callable[[], float],
    params: Sequence[ParamTensor],
    perturbation: float = 1e-5,
    backward_fn: Callable[[], None] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    loss_fn recomputes the scalar loss from the params' current values with
    no side effects. If backward_fn is given it is called first (it must zero
    and repopulate every param's grad); otherwise grads are assumed fresh.
    Relative error uses a 1e-6 floor so genuinely tiny gradients do not
    register as spurious failures.
    """
    if backward_fn is not None:
        backward_fn()
    analytic = {p.name: p.grad.copy() for p in params}
    worst, worst_name, checked = 0.0, "", 0
    for p in params:
        for k in range(p.values.size):
            orig = p.values[k]
            p.values[k] = orig + perturbation
            hi = loss_fn()
            p.values[k] = orig - perturbation
            lo = loss_fn()
            p.values[k] = orig
            fd = (hi - lo) / (2.0 * perturbation)
            a = analytic[p.name][k]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{p.name}[{k}]"
    return GradCheckReport(worst, worst_name, checked)


# --- checkpoint container -----------------------------------------------
#
# Versioned npz: flat float64 arrays keyed "p/<name>" plus moment arrays
# "m/<name>", "v/<name>" when optimizer state is included, and a JSON meta
# blob with shapes and hyperparameters in stable (sorted) order.

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Sequence[ParamTensor], optimizer: Adam | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    meta: dict = {
        "version": CHECKPOINT_VERSION,
        "params": {p.name: list(p.shape) for p in sorted(params, key=lambda p: p.name)},
    }
    for p in params:
        arrays[f"p/{p.name}"] = p.values
    if optimizer is not None:
        s = optimizer.state
        meta["optimizer"] = {
            "step": s.step,
            "learning_rate": s.learning_rate,
            "beta1": s.beta1,
            "beta2": s.beta2,
            "epsilon": s.epsilon,
        }
        for name, m in s.first_moment.items():
            arrays[f"m/{name}"] = m
        for name, v in s.second_moment.items():
            arrays[f"v/{name}"] = v
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, ParamTensor], dict | None]:
    """Load named ParamTensors (grads zeroed) and raw optimizer state.

    Returns (params_by_name, optimizer_meta_or_None); optimizer_meta carries
    the hyperparameters plus 'first_moment'/'second_moment' dicts.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise StructuralError(f"unsupported checkpoint version {meta['version']}")
        params = {}
        for name, shape in meta["params"].items():
            values = data[f"p/{name}"]
            params[name] = ParamTensor(name, tuple(shape), values.copy(), np.zeros_like(values))
        opt = None
        if "optimizer" in meta:
            opt = dict(meta["optimizer"])
            opt["first_moment"] = {n: data[f"m/{n}"].copy() for n in meta["params"]}
            opt["second_moment"] = {n: data[f"v/{n}"].copy() for n in meta["params"]}
    return params, opt


def restore_optimizer(optimizer: Adam, opt_meta: dict) -> None:
    s = optimizer.state
    s.step = int(opt_meta["step"])
    for p in optimizer.params:
        s.first_moment[p.name][:] = opt_meta["first_moment"][p.name]
        s.second_moment[p.name][:] = opt_meta["second_moment"][p.name]
