"""Named parameter store and Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named map of trainable tensors. Names unique, shapes fixed at creation."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def assign(self, name: str, data: np.ndarray):
        """In-place update preserving shape (single-writer)."""
        t = self._params[name]
        data = np.asarray(data)
        if data.shape != t.data.shape:
            raise ValueError(
                f"shape change for '{name}': {t.data.shape} -> {data.shape}"
            )
        t.data[...] = data

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self):
        return {n: t.grad for n, t in self._params.items()}

    def state_dict(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state):
        for n, a in state.items():
            if n not in self._params:
                self.add(n, a)
            else:
                self.assign(n, a)


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: ParamStore, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, t in params.items():
        state.m[name] = np.zeros_like(t.data, dtype=np.float64)
        state.v[name] = np.zeros_like(t.data, dtype=np.float64)
    return state


def adam_step(params: ParamStore, grads: dict, state: AdamState) -> ParamStore:
    """One bias-corrected Adam update, in place; increments the step count."""
    pnames = set(params.names())
    gnames = set(grads.keys())
    if pnames != gnames:
        missing = sorted(pnames - gnames)
        extra = sorted(gnames - pnames)
        raise ValueError(
            f"gradient names do not match parameters (missing={missing}, extra={extra})"
        )
    arrays = {}
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != params[name].data.shape:
            raise ValueError(
                f"gradient shape mismatch for '{name}': "
                f"{g.shape} vs {params[name].data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
        arrays[name] = g

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in arrays.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p = params[name]
        p.data[...] = p.data - update.astype(p.data.dtype)
    state.step = t
    params.step = t
    return params
