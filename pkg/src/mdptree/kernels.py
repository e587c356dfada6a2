"""Fixed-point kernels over the three-level CSR layout.

Every model (chain, MDP, quotient, game) is solved by the same three kernels:

* ``positive``  - states whose value is nonzero (graph precomputation),
* ``iterate``   - Jacobi value iteration from the zero vector,
* ``extract``   - optimal choices, with progress guaranteed for the maximiser.

A state either maximises or minimises over its groups; a group maximises,
minimises or averages over its choices (``OP_MAX``, ``OP_MIN``, ``OP_MEAN``).
Two interchangeable backends exist: explicit loops compiled with numba and a
vectorised numpy version. ``MDPTREE_NUMBA=0`` selects numpy.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

OP_MAX, OP_MIN, OP_MEAN = 0, 1, 2

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _hits(c, choice_ptr, succ, prob, inside):
    for k in range(choice_ptr[c], choice_ptr[c + 1]):
        if prob[k] > 0.0 and inside[succ[k]]:
            return True
    return False


def _choice_value(c, choice_ptr, succ, prob, x):
    acc = 0.0
    for k in range(choice_ptr[c], choice_ptr[c + 1]):
        acc += prob[k] * x[succ[k]]
    return acc


def _group_value(g, op, group_ptr, choice_ptr, succ, prob, choice_mask, x):
    """Returns (value, number of allowed choices)."""
    n = 0
    best = 0.0
    for c in range(group_ptr[g], group_ptr[g + 1]):
        if not choice_mask[c]:
            continue
        q = _choice_value(c, choice_ptr, succ, prob, x)
        if n == 0:
            best = q
        elif op == 0:
            if q > best:
                best = q
        elif op == 1:
            if q < best:
                best = q
        else:
            best += q
        n += 1
    if op == 2 and n > 0:
        best /= n
    return best, n


def _group_positive(g, op, group_ptr, choice_ptr, succ, prob, choice_mask, pos):
    n = 0
    for c in range(group_ptr[g], group_ptr[g + 1]):
        if not choice_mask[c]:
            continue
        n += 1
        hit = _hits(c, choice_ptr, succ, prob, pos)
        if op == 1:
            if not hit:
                return False
        elif hit:
            return True
    return op == 1 and n > 0


def _positive_loop(state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target):
    n = len(state_ptr) - 1
    pos = target.copy()
    changed = True
    while changed:
        changed = False
        for s in range(n):
            if pos[s]:
                continue
            if state_max[s]:
                val = False
                for g in range(state_ptr[s], state_ptr[s + 1]):
                    if group_mask[g] and _group_positive(
                        g, group_op[g], group_ptr, choice_ptr, succ, prob, choice_mask, pos
                    ):
                        val = True
                        break
            else:
                val = False
                for g in range(state_ptr[s], state_ptr[s + 1]):
                    if not group_mask[g]:
                        continue
                    if _group_positive(g, group_op[g], group_ptr, choice_ptr, succ, prob, choice_mask, pos):
                        val = True
                    else:
                        val = False
                        break
            if val:
                pos[s] = True
                changed = True
    return pos


def _state_value(s, state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, x):
    n = 0
    best = 0.0
    for g in range(state_ptr[s], state_ptr[s + 1]):
        if not group_mask[g]:
            continue
        v, k = _group_value(g, group_op[g], group_ptr, choice_ptr, succ, prob, choice_mask, x)
        if k == 0:
            continue
        if n == 0 or (state_max[s] and v > best) or (not state_max[s] and v < best):
            best = v
        n += 1
    return best


def _iterate_loop(
    state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target, zero, tol, max_iter
):
    n = len(state_ptr) - 1
    x = np.zeros(n)
    for s in range(n):
        if target[s]:
            x[s] = 1.0
    y = x.copy()
    for it in range(max_iter):
        diff = 0.0
        for s in range(n):
            if target[s] or zero[s]:
                continue
            v = _state_value(s, state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, x)
            d = abs(v - x[s])
            if d > diff:
                diff = d
            y[s] = v
        x, y = y, x
        y[:] = x
        if diff < tol:
            return x, it + 1, True
    return x, max_iter, False


def _extract_loop(
    state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target, zero, x, eps
):
    n = len(state_ptr) - 1
    ng = len(group_ptr) - 1
    gv = np.zeros(ng)
    live = np.zeros(ng, dtype=np.bool_)
    q = np.zeros(len(choice_ptr) - 1)
    for c in range(len(choice_ptr) - 1):
        if choice_mask[c]:
            q[c] = _choice_value(c, choice_ptr, succ, prob, x)
    group_choice = -np.ones(ng, dtype=np.int64)
    for g in range(ng):
        v, k = _group_value(g, group_op[g], group_ptr, choice_ptr, succ, prob, choice_mask, x)
        gv[g] = v
        live[g] = group_mask[g] and k > 0
        if k == 0 or group_op[g] == 2:
            continue
        for c in range(group_ptr[g], group_ptr[g + 1]):
            if not choice_mask[c]:
                continue
            if (group_op[g] == 0 and q[c] >= v - eps) or (group_op[g] == 1 and q[c] <= v + eps):
                group_choice[g] = c
                break
    state_group = -np.ones(n, dtype=np.int64)
    for s in range(n):
        for g in range(state_ptr[s], state_ptr[s + 1]):
            if not live[g]:
                continue
            if (state_max[s] and gv[g] >= x[s] - eps) or (not state_max[s] and gv[g] <= x[s] + eps):
                state_group[s] = g
                break
    # attractor: a positive state joins once its optimal behaviour makes progress towards joined states
    done = target.copy()
    gattr = np.zeros(ng, dtype=np.bool_)
    gpick = -np.ones(ng, dtype=np.int64)
    while True:
        for g in range(ng):
            gattr[g] = False
            if not live[g]:
                continue
            op = group_op[g]
            if op == 0:
                for c in range(group_ptr[g], group_ptr[g + 1]):
                    if choice_mask[c] and q[c] >= gv[g] - eps and _hits(c, choice_ptr, succ, prob, done):
                        gattr[g] = True
                        gpick[g] = c
                        break
            elif op == 2:
                for c in range(group_ptr[g], group_ptr[g + 1]):
                    if choice_mask[c] and _hits(c, choice_ptr, succ, prob, done):
                        gattr[g] = True
                        break
            else:
                ok = True
                for c in range(group_ptr[g], group_ptr[g + 1]):
                    if choice_mask[c] and q[c] <= gv[g] + eps and not _hits(c, choice_ptr, succ, prob, done):
                        ok = False
                        break
                gattr[g] = ok
        joined = np.zeros(n, dtype=np.bool_)
        any_new = False
        for s in range(n):
            if done[s] or zero[s]:
                continue
            if state_max[s]:
                for g in range(state_ptr[s], state_ptr[s + 1]):
                    if live[g] and gv[g] >= x[s] - eps and gattr[g]:
                        state_group[s] = g
                        if group_op[g] == 0:
                            group_choice[g] = gpick[g]
                        joined[s] = True
                        break
            else:
                ok = True
                for g in range(state_ptr[s], state_ptr[s + 1]):
                    if live[g] and gv[g] <= x[s] + eps and not gattr[g]:
                        ok = False
                        break
                joined[s] = ok
            if joined[s]:
                any_new = True
        if not any_new:
            break
        for s in range(n):
            if joined[s]:
                done[s] = True
    return state_group, group_choice


# ---------------------------------------------------------------- numpy backend


def _segment_first(cond, ptr):
    """Index of the first True entry per segment, -1 if none."""
    idx = np.where(cond, np.arange(cond.size), cond.size)
    if len(ptr) <= 1:
        return np.zeros(0, dtype=np.int64)
    first = np.minimum.reduceat(idx, ptr[:-1]) if cond.size else np.full(len(ptr) - 1, 0)
    first = np.asarray(first, dtype=np.int64)
    first[first >= cond.size] = -1
    return first


def _segment_any(cond, ptr):
    return np.maximum.reduceat(cond.astype(np.uint8), ptr[:-1]).astype(bool)


def _segment_all(cond, ptr):
    return np.minimum.reduceat(cond.astype(np.uint8), ptr[:-1]).astype(bool)


def _np_hits(choice_ptr, succ, prob, inside):
    return _segment_any(inside[succ] & (prob > 0), choice_ptr)


def _np_group_values(group_ptr, choice_ptr, succ, prob, group_op, choice_mask, x):
    q = np.add.reduceat(prob * x[succ], choice_ptr[:-1])
    gmax = np.maximum.reduceat(np.where(choice_mask, q, -np.inf), group_ptr[:-1])
    gmin = np.minimum.reduceat(np.where(choice_mask, q, np.inf), group_ptr[:-1])
    count = np.add.reduceat(choice_mask.astype(np.int64), group_ptr[:-1])
    total = np.add.reduceat(np.where(choice_mask, q, 0.0), group_ptr[:-1])
    gmean = total / np.maximum(count, 1)
    gv = np.where(group_op == OP_MAX, gmax, np.where(group_op == OP_MIN, gmin, gmean))
    gv = np.where(count > 0, gv, 0.0)
    return q, gv, count


def _np_state_values(state_ptr, state_max, live, gv):
    smax = np.maximum.reduceat(np.where(live, gv, -np.inf), state_ptr[:-1])
    smin = np.minimum.reduceat(np.where(live, gv, np.inf), state_ptr[:-1])
    out = np.where(state_max, smax, smin)
    return np.where(np.isfinite(out), out, 0.0)


def _positive_np(state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target):
    pos = target.copy()
    count = np.add.reduceat(choice_mask.astype(np.int64), group_ptr[:-1])
    live = group_mask & (count > 0)
    while True:
        hit = _np_hits(choice_ptr, succ, prob, pos)
        g_any = _segment_any(hit & choice_mask, group_ptr)
        g_all = _segment_all(hit | ~choice_mask, group_ptr) & (count > 0)
        gpos = np.where(group_op == OP_MIN, g_all, g_any)
        s_any = _segment_any(gpos & live, state_ptr)
        s_all = _segment_all(gpos | ~group_mask, state_ptr) & _segment_any(live, state_ptr)
        new = pos | np.where(state_max, s_any, s_all)
        if np.array_equal(new, pos):
            return pos
        pos = new


def _iterate_np(
    state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target, zero, tol, max_iter
):
    x = target.astype(np.float64)
    fixed = target | zero
    count = np.add.reduceat(choice_mask.astype(np.int64), group_ptr[:-1])
    live = group_mask & (count > 0)
    for it in range(max_iter):
        _, gv, _ = _np_group_values(group_ptr, choice_ptr, succ, prob, group_op, choice_mask, x)
        y = np.where(fixed, x, _np_state_values(state_ptr, state_max, live, gv))
        diff = np.max(np.abs(y - x)) if y.size else 0.0
        x = y
        if diff < tol:
            return x, it + 1, True
    return x, max_iter, False


def _extract_np(
    state_ptr, group_ptr, choice_ptr, succ, prob, state_max, group_op, choice_mask, group_mask, target, zero, x, eps
):
    q, gv, count = _np_group_values(group_ptr, choice_ptr, succ, prob, group_op, choice_mask, x)
    live = group_mask & (count > 0)
    cg = np.repeat(np.arange(len(group_ptr) - 1), np.diff(group_ptr))
    gs = np.repeat(np.arange(len(state_ptr) - 1), np.diff(state_ptr))
    cop = group_op[cg]
    c_opt = choice_mask & np.where(cop == OP_MAX, q >= gv[cg] - eps, np.where(cop == OP_MIN, q <= gv[cg] + eps, True))
    group_choice = _segment_first(c_opt, group_ptr)
    group_choice[(group_op == OP_MEAN) | (count == 0)] = -1
    g_opt = live & np.where(state_max[gs], gv >= x[gs] - eps, gv <= x[gs] + eps)
    state_group = _segment_first(g_opt, state_ptr)
    done = target.copy()
    while True:
        hit = _np_hits(choice_ptr, succ, prob, done)
        good = c_opt & hit
        first_good = _segment_first(good, group_ptr)
        att_any = _segment_any(choice_mask & hit, group_ptr)
        att_all = _segment_all(hit | ~c_opt, group_ptr)
        gattr = live & np.where(group_op == OP_MAX, first_good >= 0, np.where(group_op == OP_MEAN, att_any, att_all))
        first_attr = _segment_first(g_opt & gattr, state_ptr)
        s_all = _segment_all(gattr | ~g_opt, state_ptr)
        joined = ~done & ~zero & np.where(state_max, first_attr >= 0, s_all)
        if not joined.any():
            return state_group, group_choice
        mx = joined & state_max
        picks = first_attr[mx]
        state_group[mx] = picks
        is_max = group_op[picks] == OP_MAX
        group_choice[picks[is_max]] = first_good[picks[is_max]]
        done = done | joined


def _make_backend(name, positive, iterate, extract):
    return SimpleNamespace(name=name, positive=positive, iterate=iterate, extract=extract)


numpy_backend = _make_backend("numpy", _positive_np, _iterate_np, _extract_np)

if HAVE_NUMBA:
    _jit = numba.njit(cache=True)
    _hits = _jit(_hits)
    _choice_value = _jit(_choice_value)
    _group_value = _jit(_group_value)
    _group_positive = _jit(_group_positive)
    _state_value = _jit(_state_value)
    numba_backend = _make_backend("numba", _jit(_positive_loop), _jit(_iterate_loop), _jit(_extract_loop))
else:  # pragma: no cover
    numba_backend = None


def default_backend():
    if numba_backend is not None and os.environ.get("MDPTREE_NUMBA", "1") != "0":
        return numba_backend
    return numpy_backend


backend = default_backend()


def set_backend(name: str) -> None:
    """Switch kernels at runtime (``"numba"`` or ``"numpy"``)."""
    global backend
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba is not installed")
        backend = numba_backend
    elif name == "numpy":
        backend = numpy_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
