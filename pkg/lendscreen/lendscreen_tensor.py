"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records a `TapeNode` holding its inputs and a
backward rule. `backward(loss)` collects the nodes reachable from a scalar
loss into a `Tape`, sorted by insertion order, and sweeps it in reverse,
accumulating gradients additively into the leaf tensors.

Usage:
  from lendscreen.lendscreen_tensor import Tensor, backward

  w = Tensor([[1.0, 2.0]], requires_grad=True)
  loss = (w * w).sum()
  backward(loss)
  w.grad  # [[2., 4.]]
"""

import itertools
import weakref
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .lendscreen_enums import OpKind
from .lendscreen_errors import LendScreenError, ShapeError


_grad_enabled = True
_insertion_counter = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class no_grad:
    """Context manager that stops operations from being recorded."""

    def __enter__(self):
        global _grad_enabled
        self.prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        global _grad_enabled
        _grad_enabled = self.prev


class TapeNode(object):
    """One recorded operation. The backward rule closes over the activations
    it needs."""

    __slots__ = ('op_kind', 'inputs', 'backward_fn', 'seq', '_output')

    def __init__(self, op_kind: OpKind, inputs: Tuple['Tensor', ...],
                 backward_fn: BackwardFn, output: 'Tensor'):
        self.op_kind = op_kind
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_insertion_counter)
        self._output = weakref.ref(output)

    @property
    def input_ids(self) -> List[int]:
        return [id(tensor) for tensor in self.inputs]

    @property
    def output(self) -> Optional['Tensor']:
        return self._output()

    def release(self):
        output = self._output()
        if output is not None and output._node is self:
            output._node = None
        self.inputs = ()
        self.backward_fn = None


class Tape(object):
    """The nodes reachable from one output, in insertion (topological) order."""

    def __init__(self, nodes: List[TapeNode]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_output(cls, output: 'Tensor') -> 'Tape':
        found: Dict[int, TapeNode] = {}
        pending = [output._node]
        while pending:
            node = pending.pop()
            if node is None or node.seq in found:
                continue
            found[node.seq] = node
            for tensor in node.inputs:
                if tensor._node is not None:
                    pending.append(tensor._node)
        return cls([found[seq] for seq in sorted(found)])

    def clear(self):
        for node in self.nodes:
            node.release()
        self.nodes = []


class Tensor(object):
    """n-dimensional float64 array taking part in the differentiation graph."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[TapeNode] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> 'Tensor':
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.requires_grad = False
        tensor.grad = None
        tensor.name = None
        tensor._node = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single element tensor", self.shape)
        return float(self.data.reshape(()))

    def __float__(self):
        return self.item()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self.data)

    def __repr__(self):
        text = f'Tensor({self.data}'
        if self.requires_grad:
            text += ', requires_grad=True'
        if self._node is not None:
            text += f', op={self._node.op_kind}'
        return text + ')'

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return reduce_sum(self, axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self) -> 'Tensor':
        return transpose(self)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def sqrt(self) -> 'Tensor':
        return sqrt(self)

    def tanh(self) -> 'Tensor':
        return tanh(self)

    def sigmoid(self) -> 'Tensor':
        return sigmoid(self)

    def relu(self) -> 'Tensor':
        return relu(self)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def _record(data: np.ndarray, op_kind: OpKind, inputs: Tuple[Tensor, ...],
            backward_fn: BackwardFn) -> Tensor:
    out = Tensor._wrap(data)
    if _grad_enabled and any(tensor.requires_grad for tensor in inputs):
        out.requires_grad = True
        out._node = TapeNode(op_kind, inputs, backward_fn, out)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, what: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{what} operands do not broadcast", a.shape, b.shape)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _record(a.data + b.data, OpKind.ADD, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')

    def backward(grad):
        return (_unbroadcast(grad * b.data, a.shape),
                _unbroadcast(grad * a.data, b.shape))

    return _record(a.data * b.data, OpKind.MUL, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'div')

    def backward(grad):
        return (_unbroadcast(grad / b.data, a.shape),
                _unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return _record(a.data / b.data, OpKind.DIV, (a, b), backward)


def neg(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _record(-x.data, OpKind.NEG, (x,), lambda grad: (-grad,))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes; leading axes are batch axes.

    Backward: dA = G·Bᵀ, dB = Aᵀ·G, summed over broadcast batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)

    def backward(grad):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _record(np.matmul(a.data, b.data), OpKind.MATMUL, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    return _record(np.swapaxes(x.data, -1, -2), OpKind.TRANSPOSE, (x,),
                   lambda grad: (np.swapaxes(grad, -1, -2),))


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("cannot reshape", x.shape, shape)
    return _record(data, OpKind.RESHAPE, (x,),
                   lambda grad: (grad.reshape(x.shape),))


def index(x: Tensor, key) -> Tensor:

    def backward(grad):
        full = np.zeros_like(x.data)
        np.add.at(full, key, grad)
        return (full,)

    return _record(x.data[key], OpKind.INDEX, (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return _record(x.data.sum(axis=axis, keepdims=keepdims), OpKind.SUM, (x,),
                   backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, OpKind.EXP, (x,), lambda grad: (grad * out,))


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), OpKind.LOG, (x,),
                   lambda grad: (grad / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _record(out, OpKind.SQRT, (x,), lambda grad: (grad * 0.5 / out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, OpKind.TANH, (x,),
                   lambda grad: (grad * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return _record(out, OpKind.SIGMOID, (x,),
                   lambda grad: (grad * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _record(np.where(active, x.data, 0.0), OpKind.RELU, (x,),
                   lambda grad: (grad * active,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction); -inf entries map to 0."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=axis, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return _record(out, OpKind.SOFTMAX, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    total = exps.sum(axis=axis, keepdims=True)
    out = shifted - np.log(total)
    probs = exps / total

    def backward(grad):
        return (grad - probs * grad.sum(axis=axis, keepdims=True),)

    return _record(out, OpKind.LOG_SOFTMAX, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalizes over the last axis, then applies gain and bias."""
    gain, bias = as_tensor(gain), as_tensor(bias)
    if gain.shape[-1:] != x.shape[-1:] or bias.shape[-1:] != x.shape[-1:]:
        raise ShapeError("layer_norm affine width differs", x.shape,
                         gain.shape, bias.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std

    def backward(grad):
        grad_normed = grad * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True))
        return (grad_x,
                _unbroadcast(grad * normed, gain.shape),
                _unbroadcast(grad, bias.shape))

    return _record(normed * gain.data + bias.data, OpKind.LAYER_NORM,
                   (x, gain, bias), backward)


class DropoutMask(object):
    """Inverted-dropout mask; every entry is 0 or 1/keep_probability.

    Built from a counter-based generator, so the same (seed, shape,
    keep_probability) always yields the same mask."""

    def __init__(self, keep_probability: float, mask: np.ndarray, seed: int):
        self.keep_probability = keep_probability
        self.mask = mask
        self.seed = seed

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mask.shape

    @classmethod
    def sample(cls, seed: int, shape: Tuple[int, ...],
               keep_probability: float) -> 'DropoutMask':
        if not 0.0 < keep_probability <= 1.0:
            raise LendScreenError(
                f"keep probability must be in (0, 1], got {keep_probability}")
        generator = np.random.Generator(np.random.Philox(int(seed)))
        keep = generator.random(tuple(shape)) < keep_probability
        return cls(keep_probability,
                   keep.astype(np.float64) / keep_probability, int(seed))


def dropout(x: Tensor, mask: Optional[DropoutMask], training: bool) -> Tensor:
    if not training or mask is None:
        return x
    if mask.shape != x.shape:
        raise ShapeError("dropout mask shape differs", x.shape, mask.shape)
    scale = mask.mask
    return _record(x.data * scale, OpKind.DROPOUT, (x,),
                   lambda grad: (grad * scale,))


def embedding_lookup(table: Tensor, idx) -> Tensor:
    """Rows of `table`; the backward pass scatters into looked-up rows only."""
    positions = np.asarray(idx, dtype=np.int64)
    rows = table.shape[0]
    if positions.size and (positions.min() < 0 or positions.max() >= rows):
        raise LendScreenError(
            f"embedding index out of range [0, {rows}): {positions.max()}")

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, positions, grad)
        return (full,)

    return _record(table.data[positions], OpKind.EMBEDDING, (table,),
                   backward)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError("cosine_similarity shapes differ", u.shape, v.shape)
    if not np.any(u.data) or not np.any(v.data):
        raise LendScreenError("cosine similarity of a zero-norm vector")
    return (u * v).sum() / (sqrt((u * u).sum()) * sqrt((v * v).sum()))


def grad_reverse(x: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; the backward pass multiplies the gradient by -lam."""
    return _record(x.data, OpKind.GRAD_REVERSE, (x,),
                   lambda grad: (-lam * grad,))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    return _record(np.where(mask, value, x.data), OpKind.MASKED_FILL, (x,),
                   lambda grad: (np.where(mask, 0.0, grad),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(tensor) for tensor in tensors)
    sizes = [tensor.shape[axis] for tensor in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    try:
        data = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat shapes differ",
                         *[tensor.shape for tensor in tensors])
    return _record(data, OpKind.CONCAT, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(tensor) for tensor in tensors)

    def backward(grad):
        return tuple(np.moveaxis(grad, axis, 0))

    try:
        data = np.stack([tensor.data for tensor in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack shapes differ",
                         *[tensor.shape for tensor in tensors])
    return _record(data, OpKind.STACK, tensors, backward)


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gathers one entry per slice along `axis` (indices has size 1 there)."""
    indices = np.asarray(indices, dtype=np.int64)

    def backward(grad):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, indices, grad, axis=axis)
        return (full,)

    return _record(np.take_along_axis(x.data, indices, axis=axis),
                   OpKind.TAKE, (x,), backward)


def backward(loss: Tensor, retain_graph: bool = False) -> Tape:
    """Reverse sweep from a scalar loss; leaf gradients accumulate additively."""
    if loss.data.size != 1:
        raise ShapeError("backward needs a scalar loss", loss.shape)
    if loss._node is None:
        raise LendScreenError("loss is not connected to any tensor that "
                              "requires grad")
    tape = Tape.from_output(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        output = node.output
        grad_out = pending.pop(id(output), None) if output is not None else None
        if grad_out is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward_fn(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                tensor.grad = (np.array(grad, dtype=np.float64)
                               if tensor.grad is None else tensor.grad + grad)
            else:
                key = id(tensor)
                pending[key] = grad if key not in pending else pending[key] + grad
    if not retain_graph:
        tape.clear()
    return tape


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
              h: float = 1e-5) -> float:
    """Relative error between analytic and central-difference gradients.

    The error is ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12) over all inputs jointly."""
    for tensor in inputs:
        tensor.grad = None
    backward(fn())
    analytic = [tensor.grad.copy() if tensor.grad is not None
                else np.zeros_like(tensor.data) for tensor in inputs]
    numeric = []
    with no_grad():
        for tensor in inputs:
            estimate = np.zeros_like(tensor.data)
            flat = tensor.data.reshape(-1)
            for position in range(flat.size):
                original = flat[position]
                flat[position] = original + h
                upper = float(fn())
                flat[position] = original - h
                lower = float(fn())
                flat[position] = original
                estimate.reshape(-1)[position] = (upper - lower) / (2 * h)
            numeric.append(estimate)
    analytic_flat = np.concatenate([a.reshape(-1) for a in analytic])
    numeric_flat = np.concatenate([n.reshape(-1) for n in numeric])
    scale = max(np.linalg.norm(analytic_flat) + np.linalg.norm(numeric_flat),
                1e-12)
    return float(np.linalg.norm(analytic_flat - numeric_flat) / scale)
