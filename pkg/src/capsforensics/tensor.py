"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays, float32 by default and float64 for
gradient-check builds, always row-major with channel-first shape
conventions. Operations build a computation graph whenever gradients are
enabled and some input requires them; ``Tensor.backward()`` replays the
graph in reverse topological order and accumulates gradients on the
leaves.

Reductions accumulate in 64-bit even for float32 tensors, which keeps
statistics over large spatial extents stable.
"""

import contextlib

import numpy as np

from .errors import AutodiffError, DimensionError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only compute)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """An n-dimensional float array plus reverse-mode bookkeeping.

    ``data`` is the flat row-major numpy buffer; ``grad`` is filled in by
    ``backward()`` for tensors that require gradients. Tensors produced
    by operations keep references to their parents and a closure that
    pushes an upstream gradient one step backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "name",
                 "_parents", "_grad_fn", "_backward_used")

    # Make numpy defer mixed ndarray-Tensor arithmetic to the reflected
    # operators below instead of wrapping the Tensor as an object scalar.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._grad_fn = None
        self._backward_used = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise AutodiffError("item() needs a scalar tensor, got shape %r" % (self.shape,))

    def numpy(self):
        """The underlying array (not a copy); treat as read-only."""
        return self.data

    def __array__(self, dtype=None, copy=None):
        if copy:
            return self.data.astype(dtype, copy=True) if dtype else self.data.copy()
        return self.data if dtype is None else self.data.astype(dtype, copy=False)

    def __repr__(self):
        head = "Tensor(shape=%r, dtype=%s" % (tuple(self.shape), self.data.dtype)
        if self.name:
            head += ", name=%r" % self.name
        if self.requires_grad:
            head += ", requires_grad=True"
        return head + ")"

    def __len__(self):
        return len(self.data)

    # -- backward machinery ---------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar.

        Raises if this tensor is not a scalar or if backward already ran
        for this node (gradients would silently double-accumulate).
        """
        if self.data.size != 1:
            raise AutodiffError(
                "backward() requires a scalar loss, got shape %r" % (self.shape,))
        if self._backward_used:
            raise AutodiffError(
                "backward() already ran for this tensor; rebuild the graph first")
        self._backward_used = True

        topo = []
        seen = set()
        stack = [(self, iter(self._parents))]
        seen.add(id(self))
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in seen and p._grad_fn is not None:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)
                if node is not self:
                    node.grad = None  # free intermediate buffers

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self.data + other.data

        def grad_fn(g):
            accumulate(self, g)
            accumulate(other, g)

        return from_op(out, (self, other), grad_fn)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out = self.data - other.data

        def grad_fn(g):
            accumulate(self, g)
            accumulate(other, -g)

        return from_op(out, (self, other), grad_fn)

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = self.data * other.data

        def grad_fn(g):
            accumulate(self, g * other.data)
            accumulate(other, g * self.data)

        return from_op(out, (self, other), grad_fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = self.data / other.data

        def grad_fn(g):
            accumulate(self, g / other.data)
            accumulate(other, -g * self.data / (other.data * other.data))

        return from_op(out, (self, other), grad_fn)

    def __rtruediv__(self, other):
        return as_tensor(other).__truediv__(self)

    def __neg__(self):
        def grad_fn(g):
            accumulate(self, -g)

        return from_op(-self.data, (self,), grad_fn)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise AutodiffError("only scalar exponents are supported")
        out = self.data ** exponent

        def grad_fn(g):
            accumulate(self, g * exponent * self.data ** (exponent - 1))

        return from_op(out, (self,), grad_fn)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions --------------------------------------------------

    def exp(self):
        out = np.exp(self.data)

        def grad_fn(g):
            accumulate(self, g * out)

        return from_op(out, (self,), grad_fn)

    def log(self):
        def grad_fn(g):
            accumulate(self, g / self.data)

        return from_op(np.log(self.data), (self,), grad_fn)

    def sqrt(self):
        out = np.sqrt(self.data)

        def grad_fn(g):
            accumulate(self, g / (2.0 * out))

        return from_op(out, (self,), grad_fn)

    def clip(self, lo, hi):
        """Clamp values to [lo, hi]; gradient passes only where unclamped."""
        out = np.clip(self.data, lo, hi)
        inside = (self.data >= lo) & (self.data <= hi)

        def grad_fn(g):
            accumulate(self, g * inside)

        return from_op(out, (self,), grad_fn)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        out = out.astype(self.data.dtype)

        def grad_fn(g):
            accumulate(self, _spread(g, self.data.shape, axis, keepdims))

        return from_op(out, (self,), grad_fn)

    def mean(self, axis=None, keepdims=False):
        out = self.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64)
        out = np.asarray(out).astype(self.data.dtype)
        count = self.data.size if axis is None else _axis_count(self.data.shape, axis)

        def grad_fn(g):
            accumulate(self, _spread(g, self.data.shape, axis, keepdims) / count)

        return from_op(out, (self,), grad_fn)

    # -- shape manipulation -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)

        def grad_fn(g):
            accumulate(self, g.reshape(self.data.shape))

        return from_op(out, (self,), grad_fn)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.ndim))[::-1]
        inverse = np.argsort(axes)

        def grad_fn(g):
            accumulate(self, g.transpose(inverse))

        return from_op(self.data.transpose(axes), (self,), grad_fn)

    def __getitem__(self, index):
        out = self.data[index]

        def grad_fn(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, index, g)
            accumulate(self, buf)

        return from_op(out, (self,), grad_fn)


# -- graph helpers ------------------------------------------------------------


def as_tensor(value, dtype=None):
    """Wrap scalars/arrays as constant Tensors; pass Tensors through.

    Python scalars become float32 so they follow the other operand's
    dtype under numpy promotion instead of dragging float32 graphs up to
    float64.
    """
    if isinstance(value, Tensor):
        return value
    if dtype is None and isinstance(value, (int, float)):
        dtype = np.float32
    return Tensor(value, dtype=dtype)


def from_op(data, parents, grad_fn):
    """Create the result node of an operation.

    The graph edge is recorded only when gradients are enabled and some
    parent requires them; otherwise the closure is dropped so large
    forward-only runs hold no intermediate buffers.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def accumulate(tensor, grad):
    """Add an upstream gradient into ``tensor.grad`` (broadcast-aware)."""
    if not tensor.requires_grad:
        return
    g = _unbroadcast(np.asarray(grad), tensor.data.shape)
    if g.dtype != tensor.data.dtype:
        g = g.astype(tensor.data.dtype)
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    count = 1
    for a in axis:
        count *= shape[a]
    return count


def _spread(g, shape, axis, keepdims):
    """Broadcast a reduced gradient back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        if isinstance(axis, int):
            axis = (axis,)
        axis = tuple(a % len(shape) for a in axis)
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


# -- n-ary operations ----------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading axes.

    Both operands must be at least 2-D; gradients for broadcast batch
    axes are summed back to the operand shapes.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            "matmul needs >=2-D operands, got %r and %r" % (a.shape, b.shape))
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        if a.requires_grad:
            accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return from_op(out, (a, b), grad_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return from_op(out, tuple(tensors), grad_fn)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        for i, t in enumerate(tensors):
            accumulate(t, np.take(g, i, axis=axis))

    return from_op(out, tuple(tensors), grad_fn)


def backward(loss, params):
    """Run reverse mode and collect one gradient per parameter.

    Returns a dict keyed by each parameter Tensor; parameters the loss
    does not depend on get zero arrays of the right shape.
    """
    loss.backward()
    record = {}
    for p in params:
        record[p] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return record


def zero_grads(params):
    for p in params:
        p.grad = None


def parameter_count(params):
    """Total number of scalar entries across a parameter collection."""
    return int(sum(p.data.size for p in params))
