"""Exact, smooth, weighted, and weighted-smooth robustness over traces.

The exact semantics follows the classic min/max recursion. The smooth
variant replaces min with a log-sum-exp lower bound and max with a
softmax convex combination, both controlled by a sharpness parameter:
larger sharpness means a tighter approximation. All exponential sums are
max-shifted so no overflow occurs for |sharpness * value| <= 700.

Evaluation is vectorized over time: each node computes its value at
every sample index where it is defined, which makes temporal windows
sliding-window reductions. Gradients of the smooth variants come from a
reverse sweep over the same tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import stl
from .dynamics import Trace
from .errors import EmptyInput, NonPositiveWeight, TraceTooShort

_EXACT = "exact"
_SMOOTH = "smooth"


def smooth_min(values, sharpness: float) -> float:
    """Log-sum-exp under-approximation of min; exact for singleton input."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise EmptyInput("smooth_min of an empty set")
    if sharpness <= 0:
        raise ValueError(f"sharpness must be positive, got {sharpness}")
    return float(_softmin(values, sharpness))


def smooth_max(values, sharpness: float) -> float:
    """Softmax-weighted average: a convex combination, so min <= result <= max."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise EmptyInput("smooth_max of an empty set")
    if sharpness <= 0:
        raise ValueError(f"sharpness must be positive, got {sharpness}")
    return float(_softmax_avg(values, sharpness))


def _softmin(values, lam, axis=-1):
    shift = values.min(axis=axis, keepdims=True)
    total = np.exp(-lam * (values - shift)).sum(axis=axis)
    return np.squeeze(shift, axis=axis) - np.log(total) / lam


def _softmax_avg(values, lam, axis=-1):
    shift = values.max(axis=axis, keepdims=True)
    w = np.exp(lam * (values - shift))
    return (values * w).sum(axis=axis) / w.sum(axis=axis)


def _softmin_partials(values, lam, axis=-1):
    shift = values.min(axis=axis, keepdims=True)
    w = np.exp(-lam * (values - shift))
    return w / w.sum(axis=axis, keepdims=True)


def _softmax_partials(values, lam, axis=-1):
    """d softmax_avg / d value_i = q_i * (1 + lam * (value_i - result))."""
    shift = values.max(axis=axis, keepdims=True)
    w = np.exp(lam * (values - shift))
    q = w / w.sum(axis=axis, keepdims=True)
    result = (values * q).sum(axis=axis, keepdims=True)
    return q * (1.0 + lam * (values - result))


def _sign_pos(values):
    # sign(0) is defined as +1 so the positive branch stays continuous from above
    return np.where(values >= 0.0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# Atom margins and their gradients


def _positions(trace, pred):
    return trace.pos if pred.kind != stl.VELOCITY_BOX else trace.vel


def _box_margins(pred, trace):
    """Stacked face margins, shape (6, L); min gives inside-robustness."""
    source = _positions(trace, pred)[pred.subject[0]]
    lo = np.asarray(pred.lower)
    hi = np.asarray(pred.upper)
    rows = []
    for axis in range(3):
        rows.append(source[:, axis] - lo[axis])
        rows.append(hi[axis] - source[:, axis])
    return np.stack(rows)


def _segment_geometry(pred, trace):
    p = trace.pos[pred.subject[0]]
    a = np.asarray(pred.seg_start)
    u = np.asarray(pred.seg_end) - a
    s = np.clip(((p - a) @ u) / (u @ u), 0.0, 1.0)
    closest = a + s[:, None] * u
    offset = p - closest
    dist = np.linalg.norm(offset, axis=1)
    return offset, dist


def atom_values(pred: stl.Predicate, trace: Trace) -> np.ndarray:
    """Margin of one predicate at every sample, shape (L,)."""
    if pred.kind in (stl.BOX_INSIDE, stl.VELOCITY_BOX):
        value = _box_margins(pred, trace).min(axis=0)
    elif pred.kind == stl.BOX_OUTSIDE:
        value = (-_box_margins(pred, trace)).max(axis=0)
    elif pred.kind == stl.MIN_SEPARATION:
        a, b = pred.subject
        value = np.linalg.norm(trace.pos[a] - trace.pos[b], axis=1) - pred.threshold
    elif pred.kind == stl.SEGMENT_BAND:
        _, dist = _segment_geometry(pred, trace)
        inner = pred.standoff - pred.tolerance
        outer = pred.standoff + pred.tolerance
        value = np.minimum(dist - inner, outer - dist)
    else:
        raise ValueError(f"unknown predicate kind {pred.kind!r}")
    return pred.scale * value


def atom_backprop(pred, trace, adjoint, dpos, dvel) -> None:
    """Accumulate d(margin)/d(state) * adjoint into the gradient arrays.

    Margins built from hard min/max over faces differentiate through the
    active face only; ties break toward the lowest face index.
    """
    adjoint = pred.scale * adjoint
    target = dpos if pred.kind != stl.VELOCITY_BOX else dvel
    if pred.kind in (stl.BOX_INSIDE, stl.VELOCITY_BOX, stl.BOX_OUTSIDE):
        margins = _box_margins(pred, trace)
        if pred.kind == stl.BOX_OUTSIDE:
            active = (-margins).argmax(axis=0)
        else:
            active = margins.argmin(axis=0)
        d = pred.subject[0]
        for face in range(6):
            mask = active == face
            if not mask.any():
                continue
            axis = face // 2
            sign = 1.0 if face % 2 == 0 else -1.0  # margin is p - lo or hi - p
            if pred.kind == stl.BOX_OUTSIDE:
                sign = -sign
            target[d, mask, axis] += sign * adjoint[mask]
    elif pred.kind == stl.MIN_SEPARATION:
        a, b = pred.subject
        diff = trace.pos[a] - trace.pos[b]
        dist = np.linalg.norm(diff, axis=1)
        unit = np.divide(diff, dist[:, None], out=np.zeros_like(diff),
                         where=dist[:, None] > 0)
        dpos[a] += adjoint[:, None] * unit
        dpos[b] -= adjoint[:, None] * unit
    elif pred.kind == stl.SEGMENT_BAND:
        offset, dist = _segment_geometry(pred, trace)
        unit = np.divide(offset, dist[:, None], out=np.zeros_like(offset),
                         where=dist[:, None] > 0)
        inner = pred.standoff - pred.tolerance
        outer = pred.standoff + pred.tolerance
        # branch 0: dist - inner (d/d dist = +1); branch 1: outer - dist (-1)
        sign = np.where(dist - inner <= outer - dist, 1.0, -1.0)
        dpos[pred.subject[0]] += (adjoint * sign)[:, None] * unit
    else:
        raise ValueError(f"unknown predicate kind {pred.kind!r}")


# ---------------------------------------------------------------------------
# Tree evaluator


class _Evaluator:
    """One evaluation pass: per-node value arrays plus optional gradients.

    mode "exact" uses hard min/max; "smooth" the differentiable
    surrogates. A weight map turns "exact" into the weighted semantics
    (min/max over weight * value) and "smooth" into the normalized-weight
    transform combined by smooth min/max (soft=True, the optimizer path)
    or hard min/max (soft=False, the reporting path).
    """

    def __init__(self, trace, mode, sharpness=None, weights=None, soft=True):
        self.trace = trace
        self.mode = mode
        self.lam = sharpness
        self.weights = weights
        self.soft = soft
        self.length = trace.n_samples
        self.values = {}
        self.steps = {}
        if mode == _SMOOTH and (sharpness is None or sharpness <= 0):
            raise ValueError("smooth evaluation needs a positive sharpness")

    # -- bookkeeping

    def access_steps(self, node) -> int:
        """Samples of lookahead the evaluator actually touches past t."""
        cached = self.steps.get(node.node_id)
        if cached is not None:
            return cached
        kind = node.kind
        if kind in (stl.TRUE, stl.ATOM):
            steps = 0
        elif kind in (stl.NOT,):
            steps = self.access_steps(node.children[0])
        elif kind in (stl.AND, stl.OR, stl.IMPLIES):
            steps = max(self.access_steps(c) for c in node.children)
        elif kind in (stl.ALWAYS, stl.EVENTUALLY):
            _, hi = node.interval.to_steps(self.trace.ts)
            steps = hi + self.access_steps(node.children[0])
        elif kind == stl.NEXT:
            steps = self._successor(node) + self.access_steps(node.children[0])
        elif kind == stl.UNTIL:
            _, hi = node.interval.to_steps(self.trace.ts)
            steps = hi + max(self.access_steps(c) for c in node.children)
        else:
            raise ValueError(f"unknown node kind {kind!r}")
        self.steps[node.node_id] = steps
        return steps

    def _successor(self, node) -> int:
        # Next evaluates at the sample after the window start: t + lo + 1
        lo, _ = node.interval.to_steps(self.trace.ts)
        return lo + 1

    def _weights_for(self, node, arity):
        if self.weights is None:
            return None
        return self.weights.get(node.node_id, arity)

    # -- reductions

    def _reduce_rows(self, rows, kind, node_weights):
        """Reduce stacked operand rows (beta, L) along axis 0."""
        if rows.shape[0] == 1:
            return rows[0].copy()
        rows = self._apply_weights(rows.T, kind, node_weights).T
        if self.mode == _EXACT or (self.weights is not None and not self.soft):
            return rows.min(axis=0) if kind == "min" else rows.max(axis=0)
        if kind == "min":
            return _softmin(rows.T, self.lam)
        return _softmax_avg(rows.T, self.lam)

    def _reduce_windows(self, windows, kind, node_weights):
        """Reduce sliding windows (Lout, W) along axis 1."""
        if windows.shape[1] == 1:
            return windows[:, 0].copy()
        windows = self._apply_weights(windows, kind, node_weights)
        if self.mode == _EXACT or (self.weights is not None and not self.soft):
            return windows.min(axis=1) if kind == "min" else windows.max(axis=1)
        if kind == "min":
            return _softmin(windows, self.lam)
        return _softmax_avg(windows, self.lam)

    def _apply_weights(self, operands, kind, node_weights):
        """Weighted semantics on the last axis of ``operands``.

        Exact mode multiplies by the raw weights. Smooth mode applies the
        normalized-weight transform: each operand is scaled by a factor
        that depends on its sign and the share of its weight, which keeps
        signs and, under uniform weights, arg-extrema unchanged.
        """
        if node_weights is None or operands.shape[-1] == 1:
            return operands
        if self.mode == _EXACT:
            return operands * node_weights
        share = node_weights / node_weights.sum()
        sign = _sign_pos(operands)
        if kind == "min":
            factor = (0.5 - share) * sign + 0.5
        else:
            factor = (share - 0.5) * sign + 0.5
        return factor * operands

    def _transform_factor(self, operands, kind, node_weights):
        """The local scale applied by _apply_weights, for backprop."""
        if node_weights is None or operands.shape[-1] == 1:
            return np.ones_like(operands)
        share = node_weights / node_weights.sum()
        sign = _sign_pos(operands)
        if kind == "min":
            return (0.5 - share) * sign + 0.5
        return (share - 0.5) * sign + 0.5

    # -- forward pass

    def node_values(self, node) -> np.ndarray:
        cached = self.values.get(node.node_id)
        if cached is not None:
            return cached
        out_len = self.length - self.access_steps(node)
        if out_len <= 0:
            raise TraceTooShort(
                f"trace of {self.length} samples cannot evaluate node "
                f"{node.node_id!r}, which needs {self.access_steps(node) + 1}")
        kind = node.kind
        if kind == stl.TRUE:
            value = np.full(out_len, np.inf)
        elif kind == stl.ATOM:
            value = atom_values(node.predicate, self.trace)
        elif kind == stl.NOT:
            value = -self.node_values(node.children[0])
        elif kind in (stl.AND, stl.OR, stl.IMPLIES):
            value = self._boolean_values(node, out_len)
        elif kind in (stl.ALWAYS, stl.EVENTUALLY):
            value = self._window_values(node, out_len)
        elif kind == stl.NEXT:
            succ = self._successor(node)
            value = self.node_values(node.children[0])[succ:succ + out_len].copy()
        elif kind == stl.UNTIL:
            value = self._until_values(node, out_len)
        else:
            raise ValueError(f"unknown node kind {kind!r}")
        self.values[node.node_id] = value
        return value

    def _operand_rows(self, node, out_len):
        if node.kind == stl.IMPLIES:
            lhs, rhs = node.children
            return np.stack([-self.node_values(lhs)[:out_len],
                             self.node_values(rhs)[:out_len]])
        return np.stack([self.node_values(c)[:out_len] for c in node.children])

    def _boolean_values(self, node, out_len):
        rows = self._operand_rows(node, out_len)
        kind = "min" if node.kind == stl.AND else "max"
        return self._reduce_rows(rows, kind, self._weights_for(node, rows.shape[0]))

    def _window_values(self, node, out_len):
        lo, hi = node.interval.to_steps(self.trace.ts)
        width = hi - lo + 1
        child = self.node_values(node.children[0])
        windows = sliding_window_view(child[lo:], width)[:out_len]
        kind = "min" if node.kind == stl.ALWAYS else "max"
        return self._reduce_windows(windows, kind, self._weights_for(node, width))

    def _until_values(self, node, out_len):
        lo, hi = node.interval.to_steps(self.trace.ts)
        width = hi - lo + 1
        hold = self.node_values(node.children[0])
        goal = self.node_values(node.children[1])
        node_weights = self._weights_for(node, width)
        out = np.empty(out_len)
        for t in range(out_len):
            prefix = self._prefix_min(hold[t:t + hi + 1])[lo:]
            pair = np.stack([goal[t + lo:t + hi + 1], prefix], axis=1)
            candidates = self._reduce_windows(pair, "min", None)
            out[t] = self._reduce_windows(candidates[None, :], "max", node_weights)[0]
        return out

    def _prefix_min(self, values):
        if self.mode == _EXACT or (self.weights is not None and not self.soft):
            return np.minimum.accumulate(values)
        # running log-sum-exp keeps each prefix shifted by its own extreme
        return -np.logaddexp.accumulate(-self.lam * values) / self.lam

    def value_at(self, node, t_index: int) -> float:
        values = self.node_values(node)
        if t_index < 0 or t_index >= len(values):
            raise TraceTooShort(
                f"t_index {t_index} out of range: node {node.node_id!r} is defined "
                f"on samples 0..{len(values) - 1} of this trace")
        return float(values[t_index])

    # -- reverse pass (smooth modes only)

    def gradient(self, node, t_index: int):
        """d value_at(node, t_index) / d (positions, velocities)."""
        if self.mode != _SMOOTH or (self.weights is not None and not self.soft):
            raise ValueError("gradients are defined for the smooth evaluation paths")
        self.node_values(node)
        self.dpos = np.zeros_like(self.trace.pos)
        self.dvel = np.zeros_like(self.trace.vel)
        seed = np.zeros(len(self.values[node.node_id]))
        if t_index < 0 or t_index >= len(seed):
            raise TraceTooShort(f"t_index {t_index} beyond node range {len(seed)}")
        seed[t_index] = 1.0
        self._backprop(node, seed)
        return self.dpos, self.dvel

    def _backprop(self, node, adjoint):
        kind = node.kind
        if kind == stl.TRUE:
            return
        if kind == stl.ATOM:
            atom_backprop(node.predicate, self.trace, adjoint, self.dpos, self.dvel)
            return
        if kind == stl.NOT:
            self._child_adjoint(node.children[0], -adjoint)
            return
        if kind in (stl.AND, stl.OR, stl.IMPLIES):
            out_len = len(adjoint)
            rows = self._operand_rows(node, out_len)
            kind_rw = "min" if kind == stl.AND else "max"
            node_weights = self._weights_for(node, rows.shape[0])
            partials = self._reduce_partials(rows.T, kind_rw, node_weights).T
            signs = [-1.0, 1.0] if kind == stl.IMPLIES else [1.0] * rows.shape[0]
            for i, child in enumerate(node.children):
                self._child_adjoint(child, signs[i] * adjoint * partials[i])
            return
        if kind in (stl.ALWAYS, stl.EVENTUALLY):
            lo, hi = node.interval.to_steps(self.trace.ts)
            width = hi - lo + 1
            child = node.children[0]
            child_vals = self.node_values(child)
            out_len = len(adjoint)
            windows = sliding_window_view(child_vals[lo:], width)[:out_len]
            kind_rw = "min" if kind == stl.ALWAYS else "max"
            partials = self._reduce_partials(windows, kind_rw,
                                             self._weights_for(node, width))
            child_adj = np.zeros(len(child_vals))
            idx = np.arange(out_len)[:, None] + lo + np.arange(width)[None, :]
            np.add.at(child_adj, idx, adjoint[:, None] * partials)
            self._backprop(child, child_adj)
            return
        if kind == stl.NEXT:
            succ = self._successor(node)
            child = node.children[0]
            child_adj = np.zeros(len(self.node_values(child)))
            child_adj[succ:succ + len(adjoint)] = adjoint
            self._backprop(child, child_adj)
            return
        if kind == stl.UNTIL:
            self._until_backprop(node, adjoint)
            return
        raise ValueError(f"unknown node kind {kind!r}")

    def _child_adjoint(self, child, adjoint):
        full = np.zeros(len(self.node_values(child)))
        full[:len(adjoint)] = adjoint
        self._backprop(child, full)

    def _reduce_partials(self, operands, kind, node_weights):
        """Partials of the (possibly weighted) smooth reduce on the last axis."""
        if operands.shape[-1] == 1:
            return np.ones_like(operands)
        factor = self._transform_factor(operands, kind, node_weights)
        transformed = factor * operands
        if kind == "min":
            inner = _softmin_partials(transformed, self.lam)
        else:
            inner = _softmax_partials(transformed, self.lam)
        return inner * factor

    def _until_backprop(self, node, adjoint):
        lo, hi = node.interval.to_steps(self.trace.ts)
        width = hi - lo + 1
        hold_node, goal_node = node.children
        hold = self.node_values(hold_node)
        goal = self.node_values(goal_node)
        node_weights = self._weights_for(node, width)
        hold_adj = np.zeros(len(hold))
        goal_adj = np.zeros(len(goal))
        for t in np.nonzero(adjoint)[0]:
            seg = hold[t:t + hi + 1]
            log_cum = np.logaddexp.accumulate(-self.lam * seg)
            prefix = (-log_cum / self.lam)[lo:]
            pair = np.stack([goal[t + lo:t + hi + 1], prefix], axis=1)
            pair_partials = self._reduce_partials(pair, "min", None)
            candidates = self._reduce_windows(pair, "min", None)
            outer = self._reduce_partials(candidates[None, :], "max", node_weights)[0]
            contrib = adjoint[t] * outer
            goal_adj[t + lo:t + hi + 1] += contrib * pair_partials[:, 0]
            # prefix smooth-min partial wrt hold[u]: exp(-lam*hold[u] - log_cum_i),
            # and hold[u] feeds every prefix i with u <= lo + i
            spread = contrib * pair_partials[:, 1]
            exponent = (-self.lam * seg)[None, :] - log_cum[lo:, None]
            mask = np.arange(hi + 1)[None, :] <= (lo + np.arange(hi - lo + 1))[:, None]
            hold_adj[t:t + hi + 1] += spread @ np.exp(np.where(mask, exponent, -np.inf))
        self._backprop(hold_node, hold_adj)
        self._backprop(goal_node, goal_adj)


# ---------------------------------------------------------------------------
# Public entry points


def eval_exact(formula, trace, t_index: int = 0) -> float:
    """Exact robustness of ``formula`` on ``trace`` at sample ``t_index``."""
    return _Evaluator(trace, _EXACT).value_at(formula, t_index)


def eval_smooth(formula, trace, t_index: int = 0, sharpness: float = 10.0) -> float:
    """Smooth robustness; converges to eval_exact as sharpness grows."""
    return _Evaluator(trace, _SMOOTH, sharpness).value_at(formula, t_index)


def eval_weighted(formula, weights, trace, t_index: int = 0) -> float:
    """Weighted robustness: min/max over weight * operand value.

    With all weights equal to one this is bitwise identical to
    eval_exact on the same evaluation order.
    """
    _check_weights(weights)
    return _Evaluator(trace, _EXACT, weights=weights).value_at(formula, t_index)


def eval_weighted_smooth(formula, weights, trace, t_index: int = 0,
                         sharpness: float = 10.0, soft_combine: bool = False) -> float:
    """Weighted smooth robustness via the normalized-weight transform.

    Each operand of a weighted node is scaled by a sign-dependent share
    factor before combination. ``soft_combine`` selects the smooth
    reduction (differentiable, used by the optimizer); the default hard
    reduction is used in reports.
    """
    _check_weights(weights)
    return _Evaluator(trace, _SMOOTH, sharpness, weights=weights,
                      soft=soft_combine).value_at(formula, t_index)


def _check_weights(weights):
    if not isinstance(weights, stl.WeightMap):
        raise NonPositiveWeight("weights must be a WeightMap")


def gradient_smooth(formula, trace, sharpness: float = 10.0, weights=None,
                    t_index: int = 0):
    """Value and gradient of the smooth (or weighted-smooth) robustness.

    Returns (value, d/d positions, d/d velocities) with gradient arrays
    shaped like trace.pos and trace.vel. Weighted evaluation uses the
    soft combination so the objective stays differentiable.
    """
    ev = _Evaluator(trace, _SMOOTH, sharpness, weights=weights, soft=True)
    value = ev.value_at(formula, t_index)
    dpos, dvel = ev.gradient(formula, t_index)
    return value, dpos, dvel


# ---------------------------------------------------------------------------
# Reports


@dataclass
class RobustnessReport:
    """Exact and smooth robustness with a per-node breakdown at t=0."""

    exact: float
    smooth: float
    per_node: dict
    satisfied: bool
    sharpness: float
    weighted_exact: float = None
    weighted_smooth: float = None

    def to_dict(self) -> dict:
        d = {
            "exact": self.exact,
            "smooth": self.smooth,
            "satisfied": self.satisfied,
            "sharpness": self.sharpness,
            "per_node": {k: {"exact": e, "smooth": s} for k, (e, s) in self.per_node.items()},
        }
        if self.weighted_exact is not None:
            d["weighted_exact"] = self.weighted_exact
            d["weighted_smooth"] = self.weighted_smooth
        return d

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def make_report(formula, trace, sharpness: float, weights=None,
                t_index: int = 0) -> RobustnessReport:
    """Evaluate every node exactly and smoothly and bundle the results."""
    exact_ev = _Evaluator(trace, _EXACT)
    smooth_ev = _Evaluator(trace, _SMOOTH, sharpness)
    exact = exact_ev.value_at(formula, t_index)
    smooth = smooth_ev.value_at(formula, t_index)
    per_node = {}
    for node in formula:
        e = exact_ev.values[node.node_id]
        s = smooth_ev.values[node.node_id]
        if t_index < len(e):
            per_node[node.node_id] = (float(e[t_index]), float(s[t_index]))
    weighted_exact = weighted_smooth = None
    if weights is not None and len(weights):
        weighted_exact = eval_weighted(formula, weights, trace, t_index)
        weighted_smooth = eval_weighted_smooth(formula, weights, trace, t_index,
                                               sharpness, soft_combine=False)
    return RobustnessReport(exact=exact, smooth=smooth, per_node=per_node,
                            satisfied=exact > 0.0, sharpness=sharpness,
                            weighted_exact=weighted_exact,
                            weighted_smooth=weighted_smooth)
