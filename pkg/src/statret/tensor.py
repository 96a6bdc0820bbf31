"""Dense float64 kernels with explicit forward/backward passes.

Everything operates on plain ``numpy`` float64 arrays.  Forwards that need
state for the backward pass return an ``(output, cache)`` pair; the matching
``*_backward`` takes that cache plus the upstream gradient.  There is no
computation graph: the encoder topologies are fixed and chain these kernels
by hand.

Sparsemax is the exact Euclidean projection onto the probability simplex
(sort, cumulative sums, support threshold); its backward centers the upstream
gradient on the support and zeroes the rest.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np


class ParamTensor:
    """A named learnable array with a same-shaped gradient buffer."""

    def __init__(self, name: str, value, trainable: bool = True):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape})"


class ParamSet:
    """Ordered collection of uniquely named parameters."""

    def __init__(self, params=()):
        self._params: dict[str, ParamTensor] = {}
        for p in params:
            self.add(p)

    def add(self, param: ParamTensor) -> ParamTensor:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> ParamTensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def state(self) -> dict:
        return {p.name: p.value.copy() for p in self}

    def load_state(self, state: dict) -> None:
        for p in self:
            if p.name not in state:
                raise ValueError(f"missing parameter {p.name!r} in state")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise ValueError(
                    f"shape mismatch for {p.name!r}: {value.shape} vs {p.value.shape}")
            p.value[...] = value


# ---------------------------------------------------------------------------
# windows / convolution

def window_concat(x: np.ndarray, half_window: int) -> np.ndarray:
    """Stack each row with its ``half_window`` neighbours on both sides.

    Out-of-range neighbours are zero blocks, so the output is
    ``(M, (2K+1)*D)`` for an ``(M, D)`` input.
    """
    if half_window < 0:
        raise ValueError("half_window must be >= 0")
    m, d = x.shape
    k = half_window
    out = np.zeros((m, (2 * k + 1) * d))
    for offset in range(-k, k + 1):
        col = (offset + k) * d
        lo, hi = max(0, -offset), min(m, m - offset)
        if hi > lo:
            out[lo:hi, col:col + d] = x[lo + offset:hi + offset]
    return out


def window_concat_backward(grad: np.ndarray, half_window: int, dim: int) -> np.ndarray:
    m = grad.shape[0]
    k = half_window
    dx = np.zeros((m, dim))
    for offset in range(-k, k + 1):
        col = (offset + k) * dim
        lo, hi = max(0, -offset), min(m, m - offset)
        if hi > lo:
            dx[lo + offset:hi + offset] += grad[lo:hi, col:col + dim]
    return dx


ConvCache = namedtuple("ConvCache", "windows pre filters half_window dim")


def conv_context(x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
                 half_window: int):
    """Per-position context vectors: ``relu(filters @ window_i) + bias``.

    The bias sits outside the rectifier, so fully suppressed activations
    still carry it.
    """
    m, d = x.shape
    nf, wd = filters.shape
    if wd != (2 * half_window + 1) * d:
        raise ValueError(
            f"filter width {wd} does not match window size {(2 * half_window + 1) * d}")
    if bias.shape != (nf,):
        raise ValueError(f"bias shape {bias.shape} does not match {nf} filters")
    windows = window_concat(x, half_window)
    pre = windows @ filters.T
    out = np.maximum(pre, 0.0) + bias
    return out, ConvCache(windows, pre, filters, half_window, d)


def conv_context_backward(cache: ConvCache, grad: np.ndarray):
    d_pre = grad * (cache.pre > 0.0)
    d_bias = grad.sum(axis=0)
    d_filters = d_pre.T @ cache.windows
    d_windows = d_pre @ cache.filters
    d_x = window_concat_backward(d_windows, cache.half_window, cache.dim)
    return d_x, d_filters, d_bias


# ---------------------------------------------------------------------------
# attention normalizers

def _active_mask(shape, mask) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    active = np.asarray(mask, dtype=bool)
    if active.shape != shape:
        raise ValueError(f"mask shape {active.shape} does not match scores {shape}")
    return active


def masked_softmax(scores, mask=None) -> np.ndarray:
    """Softmax over the unmasked positions; masked entries are exactly zero."""
    z = np.asarray(scores, dtype=np.float64)
    active = _active_mask(z.shape, mask)
    if not active.any():
        raise ValueError("masked_softmax: every position is masked")
    out = np.zeros_like(z)
    zz = z[active]
    if not np.isfinite(zz).all():
        raise FloatingPointError("masked_softmax: non-finite scores")
    e = np.exp(zz - zz.max())
    out[active] = e / e.sum()
    return out


def masked_softmax_backward(probs: np.ndarray, grad) -> np.ndarray:
    # diag(p) - p p^T, applied to the upstream; masked probs are zero so
    # their rows/columns vanish on their own.
    g = np.asarray(grad, dtype=np.float64)
    inner = float(np.dot(probs, g))
    return probs * (g - inner)


def sparsemax(scores, mask=None) -> np.ndarray:
    """Euclidean projection of ``scores`` onto the probability simplex.

    Support size k is the largest k with ``1 + k*z_(k) > sum_{j<=k} z_(j)``
    over the descending sort; entries off the support are exactly zero.  A
    singleton support (max gap >= 1) is returned as an exact one-hot vertex.
    """
    z = np.asarray(scores, dtype=np.float64)
    active = _active_mask(z.shape, mask)
    if not active.any():
        raise ValueError("sparsemax: every position is masked")
    if not np.isfinite(z[active]).all():
        raise FloatingPointError("sparsemax: non-finite scores")
    vals = np.sort(z[active])[::-1]
    css = np.cumsum(vals)
    ks = np.arange(1, vals.size + 1)
    feasible = 1.0 + ks * vals > css
    k = int(ks[feasible][-1])
    out = np.zeros_like(z)
    if k == 1:
        top = int(np.flatnonzero(active & (z == vals[0]))[0])
        out[top] = 1.0
        return out
    tau = (css[k - 1] - 1.0) / k
    out[active] = np.maximum(z[active] - tau, 0.0)
    return out


def sparsemax_backward(output: np.ndarray, grad) -> np.ndarray:
    """Jacobian of sparsemax: center the upstream on the support, zero off it."""
    g = np.asarray(grad, dtype=np.float64)
    support = output > 0.0
    d = np.zeros_like(g)
    if support.any():
        d[support] = g[support] - g[support].mean()
    return d


# ---------------------------------------------------------------------------
# affine / elementwise / embedding

def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Row-wise affine map ``x @ weight.T + bias`` for 2-D ``x``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"affine: shapes {x.shape} and {weight.shape} do not compose")
    return x @ weight.T + bias, (x, weight)


def affine_backward(cache, grad: np.ndarray):
    x, weight = cache
    return grad @ weight, grad.T @ x, grad.sum(axis=0)


def tanh(x):
    return np.tanh(x)


def tanh_backward(y, grad):
    return grad * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad):
    return grad * (x > 0.0)


def embedding_lookup(table: np.ndarray, ids) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("embedding_lookup: empty id sequence")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValueError("embedding_lookup: id out of range")
    return table[ids], ids


def embedding_backward(grad_table: np.ndarray, ids: np.ndarray, grad: np.ndarray) -> None:
    # scatter-add: repeated ids accumulate
    np.add.at(grad_table, ids, grad)


def dot(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise ValueError(f"dot: shape mismatch {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def dropout(x: np.ndarray, rate: float, rng, training: bool):
    """Inverted dropout; returns the kept/scaled mask for the backward pass."""
    if not training or rate <= 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, grad):
    return grad if mask is None else grad * mask


# ---------------------------------------------------------------------------
# losses

def softmax_cross_entropy(logits, target: int):
    """``-log softmax(logits)[target]`` with max-subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    m = float(z.max())
    lse = m + math.log(float(np.exp(z - m).sum()))
    probs = np.exp(z - lse)
    return lse - float(z[target]), probs


def softmax_cross_entropy_backward(probs: np.ndarray, target: int) -> np.ndarray:
    d = probs.copy()
    d[target] -= 1.0
    return d


def sigmoid(x: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * x))


def binary_cross_entropy_with_logit(logit: float, label: float) -> float:
    """Stable ``-[y log s + (1-y) log(1-s)]`` for ``s = sigmoid(logit)``."""
    x, y = float(logit), float(label)
    return max(x, 0.0) - x * y + math.log1p(math.exp(-abs(x)))


def binary_cross_entropy_backward(logit: float, label: float) -> float:
    return sigmoid(float(logit)) - float(label)


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckEntry:
    name: str
    checked: int
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        lines = [f"gradient check (eps={self.eps:g}, tol={self.tol:g}): "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(
                f"  {e.name}: worst rel err {e.max_rel_err:.3e} at {e.worst_index} "
                f"(analytic {e.analytic:.6g}, numeric {e.numeric:.6g}, "
                f"{e.checked} scalars)")
        lines.extend(f"  FAIL {f}" for f in self.failures)
        return "\n".join(lines)


def check_gradients(loss_fn, params, eps: float = 1e-5, tol: float = 1e-4,
                    max_checks_per_tensor: int | None = None,
                    rng=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must be deterministic, return the scalar loss and leave
    analytic gradients in the parameters' ``grad`` buffers (which are zeroed
    here first).  Per-scalar relative error is
    ``|a - n| / max(1, |a|, |n|)``.  ``max_checks_per_tensor`` subsamples
    large tensors deterministically; by default every scalar is checked.
    """
    plist = [p for p in params if p.trainable]
    for p in plist:
        p.zero_grad()
    loss_fn()
    analytic = {p.name: p.grad.copy().reshape(-1) for p in plist}

    report = GradCheckReport(eps=eps, tol=tol)
    for p in plist:
        flat = p.value.reshape(-1)
        if max_checks_per_tensor is not None and flat.size > max_checks_per_tensor:
            chooser = rng if rng is not None else np.random.default_rng(0)
            idxs = sorted(chooser.choice(flat.size, size=max_checks_per_tensor,
                                         replace=False).tolist())
        else:
            idxs = range(flat.size)
        worst = (-1.0, (0,), 0.0, 0.0)
        checked = 0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            loss_plus = loss_fn()
            flat[i] = orig - eps
            loss_minus = loss_fn()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = float(analytic[p.name][i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            checked += 1
            index = tuple(int(j) for j in np.unravel_index(i, p.value.shape))
            if rel > worst[0]:
                worst = (rel, index, a, numeric)
            if rel > tol:
                report.failures.append(
                    f"{p.name}{index}: analytic={a:.6g} numeric={numeric:.6g} "
                    f"rel_err={rel:.3e}")
        report.entries.append(GradCheckEntry(p.name, checked, worst[0], worst[1],
                                             worst[2], worst[3]))
    return report
