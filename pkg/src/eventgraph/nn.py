"""Layers, parameter registry, checkpoints and gradient checking."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor. Its dotted name is assigned by the owning module tree."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


class Module:
    """Base class walking attributes in definition order to find parameters.

    Buffers are plain numpy arrays registered by name in ``_buffers``; they are
    saved in checkpoints but never trained.
    """

    training: bool = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in getattr(self, "_buffers", {}).items():
            yield prefix + key, value
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != arr.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {target.shape}")
            target[...] = arr


def _init_weight(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(_init_weight(rng, d_in, d_out, dtype))
        if bias:
            bound = 1.0 / np.sqrt(d_in)
            self.bias = Parameter(rng.uniform(-bound, bound, size=d_out).astype(dtype))
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over axis 0 with running statistics.

    Running variance uses the unbiased batch estimate.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))
        self._buffers["running_mean"] = np.zeros(d, dtype=dtype)
        self._buffers["running_var"] = np.ones(d, dtype=dtype)
        # False leaves running statistics untouched in train mode
        self.track_running_stats = True

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def __call__(self, x: Tensor, use_batch_stats: bool | None = None, weights: np.ndarray | None = None) -> Tensor:
        """``weights`` gives per-row multiplicities for the batch statistics."""
        if use_batch_stats is None:
            use_batch_stats = self.training
        if not use_batch_stats:
            out, _, _ = T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
            return out
        n = x.shape[0] if weights is None else float(np.sum(weights))
        if n < 2:
            raise ValueError(f"batch norm in train mode needs at least 2 rows, got {n:g}")
        out, mu, var = T.batch_norm(x, self.gamma, self.beta, eps=self.eps, weights=weights)
        if self.track_running_stats:
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * var * (n / (n - 1))
        return out


# checkpoints

CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_checkpoint(state: dict[str, np.ndarray], sink: BinaryIO | str) -> None:
    """Write ``state`` as an ``EVCK`` container (little-endian throughout)."""
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            save_checkpoint(state, fh)
        return
    sink.write(CHECKPOINT_MAGIC)
    sink.write(struct.pack("<BI", CHECKPOINT_VERSION, len(state)))
    for name, arr in state.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise TypeError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
        encoded = name.encode("utf-8")
        sink.write(struct.pack("<I", len(encoded)))
        sink.write(encoded)
        sink.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
        sink.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        sink.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_checkpoint(source: BinaryIO | str | bytes) -> dict[str, np.ndarray]:
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return load_checkpoint(fh)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)

    def read(n: int) -> bytes:
        buf = source.read(n)
        if len(buf) != n:
            raise ValueError("truncated checkpoint")
        return buf

    if read(4) != CHECKPOINT_MAGIC:
        raise ValueError("not an EVCK checkpoint")
    version, count = struct.unpack("<BI", read(5))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", read(4))
        name = read(name_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", read(2))
        shape = struct.unpack(f"<{rank}I", read(4 * rank)) if rank else ()
        dt = _TAG_DTYPES[tag]
        n = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(read(n * dt.itemsize), dtype=dt).reshape(shape).copy()
    return state


# gradient checking


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradcheckReport:
    """Compare reverse-mode gradients of ``sum(fn())`` with central differences.

    ``fn`` must rebuild its output from the current ``inputs`` data on every
    call and must be deterministic. ``max_entries`` probes a random subset of
    that many entries per input (drawn from ``rng``) instead of all of them.
    """
    for t in inputs.values():
        t.grad = None
    out = fn()
    out.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for name, t in inputs.items()}

    def scalar() -> float:
        with T.no_grad():
            return float(np.sum(fn().data, dtype=np.float64))

    rng = rng if rng is not None else np.random.default_rng(0)
    report = GradcheckReport()
    for name, t in inputs.items():
        if max_entries is None or t.data.size <= max_entries:
            numeric = T.numeric_grad(scalar, t.data, step)
            report.errors[name] = relative_error(analytic[name], numeric)
        else:
            idx = rng.choice(t.data.size, size=max_entries, replace=False)
            numeric = T.numeric_grad(scalar, t.data, step, idx)
            report.errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return report
