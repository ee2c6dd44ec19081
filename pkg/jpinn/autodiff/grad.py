"""
Gradient evaluation over recorded graphs and finite-difference checks.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from jpinn.autodiff.tensor import Tensor, _grad_mode, as_tensor, no_grad
from jpinn.utils.logging import get_logger

logger = get_logger(__name__)


@dataclass
class GradDiagnostics:
    """Positions (into ``wrt``) of inputs that the output does not depend on."""

    detached: List[int] = field(default_factory=list)


def _collect(output: Tensor) -> Dict[int, Tensor]:
    nodes: Dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in nodes or not node.requires_grad:
            continue
        nodes[node.id] = node
        stack.extend(node.parents)
    return nodes


def grad(
    output: Tensor,
    wrt: Sequence[Tensor],
    grad_output: Optional[Tensor] = None,
    create_graph: bool = False,
    diagnostics: Optional[GradDiagnostics] = None,
) -> List[Tensor]:
    """
    Gradient of ``output`` with respect to each tensor in ``wrt``.

    For a non-scalar output the seed defaults to ones, i.e. the gradient of
    ``output.sum()``. Because rows of a batch do not interact inside the
    networks, this yields per-row input derivatives in one pass.

    Args:
        output: Tensor computed on the graph from the ``wrt`` tensors.
        wrt: Tensors to differentiate with respect to.
        grad_output: Optional seed with the shape of ``output``.
        create_graph: Record the backward pass so the result is differentiable.
        diagnostics: Receives the positions of detached ``wrt`` entries.

    Returns:
        One gradient tensor per ``wrt`` entry, shaped like that entry.
        Detached entries get zeros.
    """
    wrt = list(wrt)
    seed = as_tensor(grad_output) if grad_output is not None else Tensor(np.ones_like(output.data))
    nodes = _collect(output)
    targets = {w.id for w in wrt}

    # keep only nodes that lie on a path from some wrt entry to the output
    relevant: Dict[int, bool] = {}
    for node_id in sorted(nodes):
        node = nodes[node_id]
        relevant[node_id] = node_id in targets or any(
            relevant.get(p.id, False) for p in node.parents
        )

    results: Dict[int, Tensor] = {}
    pending: Dict[int, Tensor] = {output.id: seed} if relevant.get(output.id) else {}
    with _grad_mode(create_graph):
        for node_id in sorted(nodes, reverse=True):
            if not relevant[node_id]:
                continue
            g = pending.pop(node_id, None)
            if g is None:
                continue
            if node_id in targets:
                results[node_id] = g
            node = nodes[node_id]
            if node.backward_rule is None:
                continue
            needs = tuple(p.requires_grad and relevant.get(p.id, False) for p in node.parents)
            if not any(needs):
                continue
            parent_grads = node.backward_rule(g, node, needs)
            for parent, need, pg in zip(node.parents, needs, parent_grads):
                if not need or pg is None:
                    continue
                previous = pending.get(parent.id)
                pending[parent.id] = pg if previous is None else previous + pg

    grads: List[Tensor] = []
    for position, w in enumerate(wrt):
        if w.id in results:
            grads.append(results[w.id])
        else:
            if diagnostics is not None:
                diagnostics.detached.append(position)
            logger.debug("detached_gradient_input", position=position, node=w.describe())
            grads.append(Tensor(np.zeros_like(w.data)))
    return grads


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    point: Sequence[float],
    h: float = 1e-4,
    order: int = 1,
    eps: float = 1e-6,
) -> float:
    """
    Compare tape derivatives of a scalar function with central differences.

    Args:
        f: Maps a 1-D input tensor to a scalar tensor.
        point: Evaluation point.
        h: Finite-difference step (> 0).
        order: 1 for the gradient, 2 for the diagonal of the Hessian.
        eps: Floor added to the denominator of the relative error.

    Returns:
        ``max_i |tape_i - fd_i| / (|tape_i| + eps)``.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x0 = np.asarray(point, dtype=np.float64).ravel()

    def value(x: np.ndarray) -> float:
        with no_grad():
            return float(f(Tensor(x)).data)

    x = Tensor(x0.copy(), requires_grad=True)
    (first,) = grad(f(x), [x], create_graph=(order == 2))
    if order == 1:
        tape = first.data.copy()
    elif order == 2:
        tape = np.empty_like(x0)
        for i in range(x0.size):
            (row,) = grad(first[i], [x])
            tape[i] = row.data[i]
    else:
        raise ValueError("order must be 1 or 2")

    fd = np.empty_like(x0)
    centre = value(x0) if order == 2 else 0.0
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        up, down = value(x0 + step), value(x0 - step)
        if order == 1:
            fd[i] = (up - down) / (2.0 * h)
        else:
            fd[i] = (up - 2.0 * centre + down) / (h * h)
    return float(np.max(np.abs(tape - fd) / (np.abs(tape) + eps)))
