"""Dense float64 tensors recorded on a define-by-run computation graph.

A ``ComputationGraph`` is a tape: every primitive appends an ``OpRecord``
after its inputs exist, so the tape is topologically ordered by construction
and reverse-mode differentiation is a single backwards sweep over it.
Graphs are rebuilt for every forward pass and must not be shared between
threads; tensors themselves are never mutated after construction.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, NonFiniteValue


class Tensor:
    __slots__ = ('data', 'graph', 'requires_grad', 'name')

    def __init__(self, data, graph=None, requires_grad=False, name=None, copy=True):
        data = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        if any(extent <= 0 for extent in data.shape):
            raise ContractViolation(
                _("Tensor extents must be positive, got %(shape)s."),
                code='bad_shape', params={'shape': data.shape},
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue(
                _("Tensor %(name)s contains NaN or Inf."), params={'name': name or '<unnamed>'},
            )
        data.flags.writeable = False
        self.data = data
        self.graph = graph
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the primitives live in Numeric.ops.
    def __add__(self, other):
        from Numeric import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from Numeric import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from Numeric import ops
        return ops.multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from Numeric import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from Numeric import ops
        return ops.scale(self, -1.0)


@dataclass
class OpRecord:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]
    saved: dict = field(default_factory=dict)


class ComputationGraph:
    def __init__(self):
        self.records = []
        self.leaves = {}

    def leaf(self, value, name, requires_grad=True):
        """Register a named leaf. Each name may appear once per graph."""
        if name in self.leaves:
            raise ContractViolation(
                _("Leaf %(name)s is already registered on this graph."),
                code='duplicate_leaf', params={'name': name},
            )
        tensor = Tensor(value, graph=self, requires_grad=requires_grad, name=name)
        self.leaves[name] = tensor
        return tensor

    def constant(self, value, name=None):
        return Tensor(value, graph=self, requires_grad=False, name=name)

    def record(self, op, inputs, output_data, backward, saved=None):
        requires_grad = any(t.requires_grad for t in inputs)
        output = Tensor(output_data, graph=self, requires_grad=requires_grad, copy=False)
        self.records.append(OpRecord(op, tuple(inputs), output, backward, saved or {}))
        return output

    def __len__(self):
        return len(self.records)


def _backpropagate(graph, output, keep=()):
    if output.data.size != 1:
        raise ContractViolation(
            _("Reverse-mode gradients need a scalar output, got shape %(shape)s."),
            code='non_scalar_output', params={'shape': output.shape},
        )
    keep = {id(t) for t in keep}
    grads = {id(output): np.ones_like(output.data)}
    kept = {}
    if id(output) in keep:
        kept[id(output)] = grads[id(output)]
    for record in reversed(graph.records):
        g = grads.pop(id(record.output), None)
        if g is None:
            continue
        if id(record.output) in keep:
            kept[id(record.output)] = g
        input_grads = record.backward(g)
        for tensor, grad in zip(record.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
    return grads, kept


def reverse_grad(graph, output):
    """Return d(output)/d(leaf) for every learnable leaf, keyed by leaf name.

    Leaves that do not influence ``output`` get zero gradients.
    """
    grads, _unused = _backpropagate(graph, output)
    result = {}
    for name, leaf in graph.leaves.items():
        if not leaf.requires_grad:
            continue
        g = grads.get(id(leaf))
        result[name] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)
    return result


def gradients_wrt(graph, output, targets):
    """Gradients of ``output`` with respect to arbitrary (intermediate) tensors."""
    _grads, kept = _backpropagate(graph, output, keep=targets)
    return [kept.get(id(t), np.zeros_like(t.data)) for t in targets]


def as_tensor(value, graph):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, graph=graph, requires_grad=False)


def ensure_same_graph(*tensors) -> Optional[ComputationGraph]:
    graphs = {id(t.graph): t.graph for t in tensors if isinstance(t, Tensor) and t.graph is not None}
    if len(graphs) > 1:
        raise ContractViolation(_("Tensors from different graphs cannot be combined."), code='graph_mismatch')
    return next(iter(graphs.values()), None)
