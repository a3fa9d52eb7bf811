"""Replay, reverse-mode differentiation and finite-difference checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .primitives import check_finite
from .tensor import ShapeError, Tape, TapeError, Tensor


def forward(tape: Tape, inputs: dict[str, object] | None = None) -> dict[str, Tensor]:
    """Re-run every recorded node, optionally rebinding named inputs.

    Parameters are read at their current values, so this is also how a
    tape is re-evaluated after a parameter perturbation.
    """
    for name, value in (inputs or {}).items():
        if name not in tape.inputs:
            raise KeyError(f"tape has no input named {name!r}")
        slot = tape.inputs[name]
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=slot.data.dtype)
        if arr.shape != slot.shape:
            raise ShapeError(f"input {name!r}: expected shape {slot.shape}, got {arr.shape}")
        slot.data = arr
    for i, node in enumerate(tape.nodes):
        label = node.label(i)
        try:
            node.prim.infer(*(t.shape for t in node.inputs))
        except ShapeError as exc:
            raise ShapeError(f"{label}: {exc}") from None
        out, node.ctx = node.prim.forward(*(t.data for t in node.inputs))
        check_finite(out, label)
        node.output.data = out
    tape.materialized = True
    return dict(tape.outputs)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar loss with respect to every leaf on the tape.

    Gradients are also accumulated into ``leaf.grad``. Leaves the loss
    does not depend on receive zeros. A tape supports one backward pass
    per forward pass.
    """
    if not tape.materialized:
        raise TapeError("backward called before forward (or twice for one forward pass)")
    if loss.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.prim.backward(node.ctx, g, *(t.data for t in node.inputs))
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    result = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        g = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    tape.materialized = False
    return result


@dataclass
class GradCheckReport:
    max_rel_error: float
    probes: int
    excluded: int


def _signatures(tape: Tape) -> list:
    return [node.prim.signature(node.ctx) if hasattr(node.prim, "signature") else None for node in tape.nodes]


def _same(a: list, b: list) -> bool:
    return all(x is None or np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    tape: Tape,
    inputs: dict[str, object] | None = None,
    epsilon: float = 1e-4,
    probes: int = 100,
    loss: str | None = None,
    seed: int = 0,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() against central differences in float64.

    Probes whose +/- perturbation changes a kink selection (max-pool
    argmax, leaky-relu sign) are excluded. Relative error uses
    ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not tape.leaves:
        raise TapeError("degenerate tape: no parameters to check")
    if loss is None:
        if len(tape.outputs) != 1:
            raise TapeError("name the loss output when the tape has several outputs")
        loss = next(iter(tape.outputs))
    loss_t = tape.outputs[loss]

    originals = {}
    for t in tape.leaves + tape.constants() + list(tape.inputs.values()):
        if id(t) not in originals and t.data.dtype.kind == "f":
            originals[id(t)] = (t, t.data.dtype, t.grad)
            t.data = t.data.astype(np.float64)
    bound = {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for k, v in (inputs or {}).items()}
    try:
        forward(tape, bound)
        base_sig = _signatures(tape)
        analytic = backward(tape, loss_t)

        sizes = np.array([leaf.size for leaf in tape.leaves])
        total = int(sizes.sum())
        rng = np.random.default_rng(seed)
        flat = np.arange(total) if total <= probes else np.sort(rng.choice(total, size=probes, replace=False))
        offsets = np.concatenate([[0], np.cumsum(sizes)])

        worst, used, excluded = 0.0, 0, 0
        for f in flat:
            k = int(np.searchsorted(offsets, f, side="right") - 1)
            leaf, idx = tape.leaves[k], int(f - offsets[k])
            view = leaf.data.reshape(-1)
            saved = view[idx]
            view[idx] = saved + epsilon
            forward(tape)
            plus, sig_p = float(loss_t.data), _signatures(tape)
            view[idx] = saved - epsilon
            forward(tape)
            minus, sig_m = float(loss_t.data), _signatures(tape)
            view[idx] = saved
            if not (_same(base_sig, sig_p) and _same(base_sig, sig_m)):
                excluded += 1
                continue
            numeric = (plus - minus) / (2 * epsilon)
            a = float(analytic[leaf].reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
            used += 1
    finally:
        for t, dtype, grad in originals.values():
            t.data = t.data.astype(dtype)
            t.grad = grad
        forward(tape)
    return GradCheckReport(worst, used, excluded)


def grad_check(tape: Tape, inputs: dict[str, object] | None = None, epsilon: float = 1e-4, **kw) -> float:
    """Maximum relative error between backward() and central differences."""
    return check_gradients(tape, inputs, epsilon, **kw).max_rel_error
