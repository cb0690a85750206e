"""Dense tensor with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Differentiable operations (see
:mod:`sinefm.functional`) attach a parent list and a backward rule to their
outputs; :meth:`Tensor.backward` replays those rules in reverse topological
order and then consumes the record.
"""

import numpy as np

from .errors import GraphStateError, ShapeError

DEFAULT_DTYPE = np.float32


def _as_array(data, dtype):
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return np.ascontiguousarray(data, dtype=dtype)
        if np.issubdtype(data.dtype, np.floating):
            return np.ascontiguousarray(data)
        return np.ascontiguousarray(data, dtype=DEFAULT_DTYPE)
    return np.ascontiguousarray(np.asarray(data, dtype=dtype or DEFAULT_DTYPE))


class Tensor:
    """Numeric array plus optional gradient tracking.

    Rank-4 ``(N, C, H, W)`` is the layout every convolutional op expects;
    other ranks are allowed for logits, labels and scalar losses.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_consumed", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        if self.data.dtype not in (np.float32, np.float64):
            raise TypeError(f"unsupported element type {self.data.dtype}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None and not self._consumed

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- arithmetic sugar -----------------------------------------------------

    def __add__(self, other):
        from .functional import add
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        from .functional import add, scale
        return add(self, scale(_wrap(other, self.dtype), -1.0))

    def __mul__(self, other):
        from .functional import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        from .functional import scale
        return scale(self, -1.0)

    def sum(self):
        from .functional import total
        return total(self)

    # -- reverse pass -----------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every tracked tensor reachable from this scalar.

        Leaf gradients accumulate across calls; the computation record itself
        is consumed, so calling again without a fresh forward raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphStateError("computation record already consumed; re-run forward first")
        order = _topological(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(f"gradient shape {pg.shape} != tensor shape {parent.shape}")
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True
        if not order:
            self._consumed = True


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topological(root):
    if not root.requires_grad:
        return []
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order
