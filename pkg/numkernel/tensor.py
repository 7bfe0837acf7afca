"""
Tensor and Tape
Dense numpy-backed values plus a reverse-mode tape for the op set in ops.py
"""

import threading
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from policy.errors import ContractError

logger = logging.getLogger(__name__)

_state = threading.local()


class Tensor:
    """Dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class Node:
    """One recorded op application."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of op applications.
    Use as a context manager; ops executed inside record themselves when any
    input requires a gradient. Outside a tape nothing is recorded.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_stack() -> List[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> Tensor:
    """Attach output to the active tape when gradients are needed."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.nodes.append(Node(op, inputs, output, backward_fn))
    return output


def backward(tape: Tape, loss: Tensor) -> Dict[int, Tensor]:
    """
    Replay the tape in reverse from a scalar loss.

    Args:
        tape: Tape the loss was computed under
        loss: Scalar tensor produced by taped ops

    Returns:
        Mapping id(leaf) -> leaf for every requires_grad leaf reached; each
        leaf's .grad holds dLoss/dLeaf.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    produced = {id(node.output) for node in tape.nodes}
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        input_grads = node.backward_fn(g_out)
        for tensor, g in zip(node.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                leaves[key] = tensor

    for key, leaf in leaves.items():
        leaf.grad = grads.get(key, np.zeros_like(leaf.data)).reshape(leaf.shape)

    logger.debug(f"backward replayed {len(tape.nodes)} nodes, {len(leaves)} leaves")
    return leaves
