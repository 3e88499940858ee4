"""Named parameter storage, gradient evaluation and the Adam optimizer."""

from __future__ import annotations

import hashlib
from typing import Callable, Mapping

import numpy as np

from rre.errors import ShapeError
from rre.numerics.autodiff import Tensor, backward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamStore:
    """Ordered mapping of parameter name to array, plus Adam moment state.

    Parameter arrays are replaced, never written in place, by
    :func:`adam_step`, so a reference taken before an update keeps its value.
    """

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def set(self, name: str, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self.params[name].shape:
            raise ShapeError(f"{name}: expected shape {self.params[name].shape}, got {arr.shape}")
        self.params[name] = arr

    def copy(self) -> "ParamStore":
        out = ParamStore()
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.step = self.step
        return out

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw bytes of the parameters."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            arr = self.params[name]
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def evaluate_with_gradients(
    loss_fn: Callable[..., Tensor], store: ParamStore, *args, **kwargs
) -> tuple[float, dict[str, np.ndarray]]:
    """Run ``loss_fn(params, *args)`` and return the loss and its gradients.

    ``params`` is a dict of leaf tensors built from ``store``. Parameters that
    ``loss_fn`` never touches get zero gradients.
    """
    params = store.tensors(requires_grad=True)
    loss = loss_fn(params, *args, **kwargs)
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    names = list(params)
    grads = backward(loss, [params[n] for n in names])
    return loss.item(), dict(zip(names, grads))


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr: float, ascend: bool = False) -> ParamStore:
    """One bias-corrected Adam update (beta1=0.9, beta2=0.999, eps=1e-8).

    With ``ascend=True`` the update climbs the objective instead of
    descending it. Parameters absent from ``grads`` are treated as having a
    zero gradient, so their moments still decay.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    unknown = set(grads) - set(store.params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    for name, g in grads.items():
        if np.shape(g) != store.params[name].shape:
            raise ShapeError(f"{name}: gradient shape {np.shape(g)} != parameter shape {store.params[name].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        g = np.asarray(g, dtype=np.float64)
        if ascend:
            g = -g
        m = ADAM_BETA1 * store.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * store.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        store.m[name] = m
        store.v[name] = v
        store.params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return store


def uniform_init(rng, fan_in: int, shape) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in), the usual recurrent-net default."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
