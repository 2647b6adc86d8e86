"""
Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Only the operations the convolutional autoencoder needs are provided:
element-wise arithmetic with simple broadcasting, reductions, reshaping,
2-D convolution, fully connected layers, batch normalization, SELU/GELU,
softmax negative log-likelihood, complex-linear maps on [Re; Im] layouts and
an AdamW optimizer.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import AutodiffError

logger = logging.getLogger("caelab.autodiff")

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

ArrayLike = Union["DiffTensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DiffTensor:
    """Real n-d array plus the tape node that produced it."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, parents: Tuple["DiffTensor", ...] = (),
                 backward: Optional[BackwardFn] = None, requires_grad: bool = False,
                 name: Optional[str] = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values.copy())

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)


def constant(values) -> DiffTensor:
    return DiffTensor(values)


def parameter(values, name: Optional[str] = None) -> DiffTensor:
    return DiffTensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)


def _wrap(x: ArrayLike) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _node(values: np.ndarray, parents: Sequence[DiffTensor], backward: BackwardFn) -> DiffTensor:
    """Record a tape node only when some parent needs a gradient."""
    if any(p.requires_grad for p in parents):
        return DiffTensor(values, tuple(parents), backward, requires_grad=True)
    return DiffTensor(values)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- tape walk

def _topological_order(root: DiffTensor) -> List[DiffTensor]:
    order: List[DiffTensor] = []
    state: Dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: List[Tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        if state.get(key) == 2:
            continue
        if state.get(key) == 1:
            raise AutodiffError("tape contains a cycle")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            if not parent.requires_grad:
                continue
            pstate = state.get(id(parent))
            if pstate == 1:
                raise AutodiffError("tape contains a cycle")
            if pstate is None:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor, params: Optional[Iterable[DiffTensor]] = None) -> None:
    """
    Populate `.grad` of every parameter reachable from a scalar loss.

    Parameters listed in `params` but unreachable get zero gradients;
    constants and intermediate nodes are left untouched.
    """
    if loss.values.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {}
    reached = set()
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.values)
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.asarray(g, dtype=np.float64).reshape(node.shape)
                reached.add(id(node))
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg)
                if pg.shape != parent.shape:
                    raise AutodiffError(f"gradient shape {pg.shape} != value shape {parent.shape}")
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    if params is not None:
        for p in params:
            if id(p) not in reached:
                p.grad = np.zeros_like(p.values)


def zero_grad(params: Iterable[DiffTensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- arithmetic

def add(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.values * b.values, (a, b),
                 lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = _wrap(a), _wrap(b)
    out = a.values / b.values
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.values, a.shape),
                            _unbroadcast(-g * out / b.values, b.shape)))


def power(x: DiffTensor, exponent: float) -> DiffTensor:
    x = _wrap(x)
    return _node(x.values ** exponent, (x,),
                 lambda g: (g * exponent * x.values ** (exponent - 1),))


def exp(x: DiffTensor) -> DiffTensor:
    x = _wrap(x)
    out = np.exp(x.values)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: DiffTensor) -> DiffTensor:
    x = _wrap(x)
    return _node(np.log(x.values), (x,), lambda g: (g / x.values,))


def sqrt(x: DiffTensor) -> DiffTensor:
    x = _wrap(x)
    out = np.sqrt(x.values)
    return _node(out, (x,), lambda g: (g * 0.5 / out,))


def clamp_min(x: DiffTensor, floor: float = 0.0) -> DiffTensor:
    """max{floor, x}; gradient passes where x > floor."""
    x = _wrap(x)
    return _node(np.maximum(x.values, floor), (x,), lambda g: (g * (x.values > floor),))


def maximum(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Element-wise max; ties route the gradient to `a`."""
    a, b = _wrap(a), _wrap(b)
    pick_a = a.values >= b.values
    return _node(np.where(pick_a, a.values, b.values), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


# ---------------------------------------------------------------- reductions and shape

def sum(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:  # noqa: A001
    x = _wrap(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _node(out, (x,), _back)


def mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    x = _wrap(x)
    count = x.values.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def max_along(x: DiffTensor, axis: int) -> DiffTensor:
    """Max over one axis; subgradient flows to the first arg-max entry."""
    x = _wrap(x)
    idx = np.argmax(x.values, axis=axis)
    out = np.take_along_axis(x.values, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def _back(g):
        grad = np.zeros_like(x.values)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)
    return _node(out, (x,), _back)


def reshape(x: DiffTensor, shape) -> DiffTensor:
    x = _wrap(x)
    return _node(x.values.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    x = _wrap(x)
    inverse = np.argsort(axes)
    return _node(np.transpose(x.values, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[DiffTensor], axis: int) -> DiffTensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.values for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take(x: DiffTensor, indices, axis: int) -> DiffTensor:
    x = _wrap(x)
    indices = np.asarray(indices)

    def _back(g):
        grad = np.zeros_like(x.values)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)
    return _node(np.take(x.values, indices, axis=axis), (x,), _back)


def complex_linear(x: DiffTensor, forward: Callable[[np.ndarray], np.ndarray],
                   adjoint: Callable[[np.ndarray], np.ndarray]) -> DiffTensor:
    """
    Apply a complex-linear map to a [Re; Im] real layout along the last axis.

    `forward` and `adjoint` act on complex arrays along their last axis; the
    backward pass is realify(adjoint(complexify(grad))).
    """
    x = _wrap(x)
    half = x.shape[-1] // 2
    z = x.values[..., :half] + 1j * x.values[..., half:]
    w = forward(z)
    out = np.concatenate([w.real, w.imag], axis=-1)

    def _back(g):
        gh = g.shape[-1] // 2
        back = adjoint(g[..., :gh] + 1j * g[..., gh:])
        return (np.concatenate([back.real, back.imag], axis=-1),)
    return _node(out, (x,), _back)


# ---------------------------------------------------------------- activations

def selu(x: DiffTensor) -> DiffTensor:
    x = _wrap(x)
    v = x.values
    neg = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0, SELU_LAMBDA * v, neg)
    slope = np.where(v > 0, SELU_LAMBDA, neg + SELU_LAMBDA * SELU_ALPHA)
    return _node(out, (x,), lambda g: (g * slope,))


def gelu(x: DiffTensor) -> DiffTensor:
    """Exact GELU x * Phi(x)."""
    x = _wrap(x)
    v = x.values
    cdf = 0.5 * (1.0 + special.erf(v / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi)
    return _node(v * cdf, (x,), lambda g: (g * (cdf + v * pdf),))


ACTIVATIONS = {"selu": selu, "gelu": gelu}


def softmax_values(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_nll(logits: DiffTensor, targets: np.ndarray) -> DiffTensor:
    """-sum log softmax(logits)[target] over every leading position."""
    logits = _wrap(logits)
    targets = np.asarray(targets)
    n_c = logits.shape[-1]
    if n_c < 2:
        raise AutodiffError(f"softmax needs at least two classes, got {n_c}")
    if targets.shape != logits.shape[:-1]:
        raise AutodiffError(f"target shape {targets.shape} != logits positions {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_c):
        raise AutodiffError(f"target index out of range [0, {n_c})")
    z = logits.values
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)
    loss = -picked.sum()

    def _back(g):
        grad = np.exp(log_probs)
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * g,)
    return _node(np.asarray(loss), (logits,), _back)


# ---------------------------------------------------------------- layers

def fully_connected(x: DiffTensor, weight: DiffTensor, bias: Optional[DiffTensor] = None) -> DiffTensor:
    """x[..., in] @ W[out, in]^T + b[out]."""
    x, weight = _wrap(x), _wrap(weight)
    if x.shape[-1] != weight.shape[1]:
        raise AutodiffError(f"fully connected input width {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    out = x.values @ weight.values.T
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (weight.shape[0],):
            raise AutodiffError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.values
        parents.append(bias)

    def _back(g):
        flat_g = g.reshape(-1, g.shape[-1])
        flat_x = x.values.reshape(-1, x.shape[-1])
        grads = [g @ weight.values, flat_g.T @ flat_x]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads
    return _node(out, parents, _back)


def _conv2d_grads(x_pad: np.ndarray, windows: np.ndarray, weight: np.ndarray, g: np.ndarray):
    """(grad wrt padded input, grad wrt weight) of a stride-1 cross-correlation."""
    _, _, kh, kw = weight.shape
    out_h, out_w = g.shape[2], g.shape[3]
    grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_x = np.zeros_like(x_pad)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, weight[:, :, i, j], axes=([1], [0]))
            grad_x[:, :, i:i + out_h, j:j + out_w] += np.transpose(contrib, (0, 3, 1, 2))
    return grad_x, grad_w


def conv2d(x: DiffTensor, weight: DiffTensor, bias: Optional[DiffTensor] = None,
           padding: Tuple[int, int] = (0, 0)) -> DiffTensor:
    """
    Stride-1 cross-correlation.

    x is [C_in, H, W] or [B, C_in, H, W]; weight is [C_out, C_in, kh, kw].
    """
    x, weight = _wrap(x), _wrap(weight)
    unbatched = x.ndim == 3
    xv = x.values[None] if unbatched else x.values
    if xv.ndim != 4 or weight.ndim != 4 or xv.shape[1] != weight.shape[1]:
        raise AutodiffError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    ph, pw = padding
    _, _, kh, kw = weight.shape
    x_pad = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if x_pad.shape[2] < kh or x_pad.shape[3] < kw:
        raise AutodiffError(f"kernel {kh}x{kw} does not fit padded input {x_pad.shape[2:]}")
    windows = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))
    out = np.transpose(np.tensordot(windows, weight.values, axes=([1, 4, 5], [1, 2, 3])), (0, 3, 1, 2))
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.values[None, :, None, None]
        parents.append(bias)
    if unbatched:
        out = out[0]

    def _back(g):
        g4 = g[None] if unbatched else g
        grad_x_pad, grad_w = _conv2d_grads(x_pad, windows, weight.values, g4)
        grad_x = grad_x_pad[:, :, ph:ph + xv.shape[2], pw:pw + xv.shape[3]]
        grads = [grad_x[0] if unbatched else grad_x, grad_w]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads
    return _node(out, parents, _back)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batch_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, state: BatchNormState,
               training: bool = True) -> DiffTensor:
    """
    Per-channel normalization; channel axis is 1 ([B, C] or [B, C, H, W]).

    Train mode uses batch statistics and updates the running ones in `state`.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.ndim not in (2, 4):
        raise AutodiffError(f"batch norm expects [B, C] or [B, C, H, W], got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    count = int(np.prod([x.shape[a] for a in axes]))
    if training:
        if x.shape[0] < 2:
            raise AutodiffError(f"batch norm in train mode needs batch size >= 2, got {x.shape[0]}")
        mu = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * count / max(count - 1, 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.values - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.values.reshape(bshape) * xhat + beta.values.reshape(bshape)

    def _back(g):
        grad_gamma = (g * xhat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        scale = (gamma.values * inv_std).reshape(bshape)
        if training:
            g_mean = g.mean(axis=axes, keepdims=True)
            gx_mean = (g * xhat).mean(axis=axes, keepdims=True)
            grad_x = scale * (g - g_mean - xhat * gx_mean)
        else:
            grad_x = scale * g
        return grad_x, grad_gamma, grad_beta
    return _node(out, (x, gamma, beta), _back)


# ---------------------------------------------------------------- modules

class Module:
    """Container of named parameters and batch-norm buffers."""

    def __init__(self):
        self.training = True

    def children(self) -> Dict[str, "Module"]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Module)}

    def own_parameters(self) -> Dict[str, DiffTensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, DiffTensor) and v.requires_grad}

    def named_parameters(self, prefix: str = "") -> Dict[str, DiffTensor]:
        out = {f"{prefix}{k}": v for k, v in self.own_parameters().items()}
        for name, child in self.children().items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        for name, items in vars(self).items():
            if isinstance(items, list):
                for i, child in enumerate(items):
                    if isinstance(child, Module):
                        out.update(child.named_parameters(f"{prefix}{name}{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name, child in self.children().items():
            out.update(child.named_buffers(f"{prefix}{name}."))
        for name, items in vars(self).items():
            if isinstance(items, list):
                for i, child in enumerate(items):
                    if isinstance(child, Module):
                        out.update(child.named_buffers(f"{prefix}{name}{i}."))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def parameters(self) -> List[DiffTensor]:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._all_children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _all_children(self) -> List["Module"]:
        kids = list(self.children().values())
        for items in vars(self).values():
            if isinstance(items, list):
                kids.extend(c for c in items if isinstance(c, Module))
        return kids


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: Tuple[int, int],
                 padding: Optional[Tuple[int, int]] = None):
        super().__init__()
        kh, kw = kernel
        fan_in = c_in * kh * kw
        self.weight = parameter(_uniform(rng, (c_out, c_in, kh, kw), fan_in))
        self.bias = parameter(_uniform(rng, (c_out,), fan_in))
        self.padding = padding if padding is not None else (kh // 2, kw // 2)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return conv2d(x, self.weight, self.bias, self.padding)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, zero_init: bool = False):
        super().__init__()
        if zero_init:
            self.weight = parameter(np.zeros((n_out, n_in)))
            self.bias = parameter(np.zeros(n_out))
        else:
            self.weight = parameter(_uniform(rng, (n_out, n_in), n_in))
            self.bias = parameter(_uniform(rng, (n_out,), n_in))

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return fully_connected(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.state = BatchNormState(np.zeros(channels), np.ones(channels), momentum, eps)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return batch_norm(x, self.gamma, self.beta, self.state, self.training)

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {f"{prefix}running_mean": self.state.running_mean,
                f"{prefix}running_var": self.state.running_var}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name == "running_mean":
            self.state.running_mean = np.array(value, dtype=np.float64)
        elif name == "running_var":
            self.state.running_var = np.array(value, dtype=np.float64)
        else:
            raise KeyError(name)


def parameter_count(module: Module) -> int:
    return int(np.sum([p.values.size for p in module.parameters()]))


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    """AdamW moments and hyperparameters"""
    lr: float = 0.001
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Dict[str, DiffTensor], grads: Dict[str, np.ndarray],
               state: OptimizerState) -> OptimizerState:
    """Decoupled-weight-decay Adam update applied in place to `params`."""
    beta1, beta2 = state.betas
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise AutodiffError(f"gradient for '{name}' has shape {g.shape}, parameter has {p.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.values = p.values * (1.0 - state.lr * state.weight_decay)
        p.values = p.values - state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return state


class AdamW:
    """Stateful wrapper around adamw_step for a fixed parameter set."""

    def __init__(self, params: Dict[str, DiffTensor], lr: float = 0.001, weight_decay: float = 0.01,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)

    def step(self) -> None:
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.values))
                 for name, p in self.params.items()}
        adamw_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        zero_grad(self.params.values())
