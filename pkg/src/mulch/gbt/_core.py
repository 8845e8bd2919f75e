"""Compiled second-order boosting kernels (logistic loss, exact greedy splits).

Trees are stored flat: ``feature[k] < 0`` marks a leaf, otherwise rows with
``x[feature] < threshold`` go to ``left[k]`` and the rest to ``right[k]``.
Node indices are local to each tree; ``tree_start[t]`` is the offset of tree t.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(m):
    if m >= 0:
        return 1.0 / (1.0 + np.exp(-m))
    e = np.exp(m)
    return e / (1.0 + e)


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value, start, out):
    """Add one tree's leaf values to ``out`` in place."""
    for i in range(X.shape[0]):
        k = 0
        while feature[start + k] >= 0:
            if X[i, feature[start + k]] < threshold[start + k]:
                k = left[start + k]
            else:
                k = right[start + k]
        out[i] += value[start + k]


@njit(cache=True)
def predict_margin(X, base_margin, feature, threshold, left, right, value, tree_start, n_trees):
    out = np.full(X.shape[0], base_margin)
    for t in range(n_trees):
        predict_tree(X, feature, threshold, left, right, value, tree_start[t], out)
    return out


@njit(cache=True)
def _build_tree(X, order, g, h, in_sample, max_depth, gamma, mcw, lam, eta,
                feature, threshold, left, right, value, pos):
    """Grow one tree level by level. Returns (node count, work units)."""
    n, p = X.shape
    cap = feature.shape[0]
    G = np.zeros(cap)
    H = np.zeros(cap)
    depth = np.zeros(cap, np.int64)
    active = np.zeros(cap, np.bool_)

    for i in range(n):
        if in_sample[i]:
            pos[i] = 0
            G[0] += g[i]
            H[0] += h[i]
        else:
            pos[i] = -1
    n_nodes = 1
    feature[0] = -1
    threshold[0] = 0.0
    left[0] = -1
    right[0] = -1
    active[0] = True
    level_nodes = np.zeros(cap, np.int64)
    level_nodes[0] = 0
    n_level = 1
    cur_depth = 0
    work = 0

    GL = np.zeros(cap)
    HL = np.zeros(cap)
    last = np.zeros(cap)
    seen = np.zeros(cap, np.bool_)
    best_gain = np.zeros(cap)
    best_feat = np.full(cap, -1, np.int64)
    best_thr = np.zeros(cap)

    while n_level > 0 and cur_depth < max_depth:
        for j in range(n_level):
            nd = level_nodes[j]
            best_gain[nd] = 0.0
            best_feat[nd] = -1
        for f in range(p):
            for j in range(n_level):
                nd = level_nodes[j]
                GL[nd] = 0.0
                HL[nd] = 0.0
                seen[nd] = False
            for r in range(n):
                i = order[f, r]
                nd = pos[i]
                if nd < 0 or not active[nd]:
                    continue
                v = X[i, f]
                if seen[nd] and v > last[nd]:
                    hl = HL[nd]
                    hr = H[nd] - hl
                    if hl >= mcw and hr >= mcw:
                        gl = GL[nd]
                        gr = G[nd] - gl
                        gain = 0.5 * (gl * gl / max(hl + lam, 1e-300)
                                      + gr * gr / max(hr + lam, 1e-300)
                                      - G[nd] * G[nd] / max(H[nd] + lam, 1e-300)) - gamma
                        if gain > best_gain[nd]:
                            best_gain[nd] = gain
                            best_feat[nd] = f
                            best_thr[nd] = 0.5 * (last[nd] + v)
                GL[nd] += g[i]
                HL[nd] += h[i]
                last[nd] = v
                seen[nd] = True
            work += n
        # expand
        n_next = 0
        next_nodes = np.zeros(2 * n_level, np.int64)
        for j in range(n_level):
            nd = level_nodes[j]
            active[nd] = False
            if best_feat[nd] >= 0:
                lc = n_nodes
                rc = n_nodes + 1
                n_nodes += 2
                feature[nd] = best_feat[nd]
                threshold[nd] = best_thr[nd]
                left[nd] = lc
                right[nd] = rc
                for c in (lc, rc):
                    feature[c] = -1
                    threshold[c] = 0.0  # leaves carry no split; keep the arrays reproducible
                    left[c] = -1
                    right[c] = -1
                    G[c] = 0.0
                    H[c] = 0.0
                    depth[c] = cur_depth + 1
                    active[c] = True
                next_nodes[n_next] = lc
                next_nodes[n_next + 1] = rc
                n_next += 2
        if n_next == 0:
            break
        for i in range(n):
            nd = pos[i]
            if nd < 0 or feature[nd] < 0:
                continue
            if X[i, feature[nd]] < threshold[nd]:
                c = left[nd]
            else:
                c = right[nd]
            pos[i] = c
            G[c] += g[i]
            H[c] += h[i]
        work += n
        level_nodes[:n_next] = next_nodes[:n_next]
        n_level = n_next
        cur_depth += 1

    for k in range(n_nodes):
        if feature[k] < 0:
            value[k] = -eta * G[k] / max(H[k] + lam, 1e-300)
        else:
            value[k] = 0.0
    return n_nodes, work


@njit(cache=True)
def boost(X, y, X_val, y_val, base_margin, eta, max_depth, n_rounds, gamma, mcw, lam,
          subsample, patience, seed):
    """Run logistic boosting with optional patience-based early stopping.

    ``patience <= 0`` disables early stopping. Returns the flat tree arrays,
    the per-round validation accuracy curve, the per-round training loss, the
    number of rounds used and the work-unit count.
    """
    np.random.seed(seed)
    n, p = X.shape
    n_val = X_val.shape[0]
    order = np.empty((p, n), np.int64)
    for f in range(p):
        order[f] = np.argsort(X[:, f], kind="mergesort")

    tree_cap = 2 * n + 1
    cap = max(tree_cap * 4, 64)
    feature = np.empty(cap, np.int64)
    threshold = np.empty(cap)
    left = np.empty(cap, np.int64)
    right = np.empty(cap, np.int64)
    value = np.empty(cap)
    tree_start = np.zeros(n_rounds + 1, np.int64)

    t_feature = np.empty(tree_cap, np.int64)
    t_threshold = np.empty(tree_cap)
    t_left = np.empty(tree_cap, np.int64)
    t_right = np.empty(tree_cap, np.int64)
    t_value = np.empty(tree_cap)
    pos = np.empty(n, np.int64)

    margin = np.full(n, base_margin)
    margin_val = np.full(n_val, base_margin)
    g = np.empty(n)
    h = np.empty(n)
    in_sample = np.ones(n, np.bool_)
    curve = np.empty(n_rounds)
    loss = np.empty(n_rounds)
    used = 0
    best_acc = -1.0
    best_round = -1
    work = np.int64(0)
    total = 0

    for rnd in range(n_rounds):
        for i in range(n):
            pr = _sigmoid(margin[i])
            g[i] = pr - y[i]
            h[i] = pr * (1.0 - pr)
        if subsample < 1.0:
            for i in range(n):
                in_sample[i] = np.random.random() < subsample
        nn, w = _build_tree(X, order, g, h, in_sample, max_depth, gamma, mcw, lam, eta,
                            t_feature, t_threshold, t_left, t_right, t_value, pos)
        work += w
        if total + nn > cap:
            new_cap = max(2 * cap, total + nn)
            feature = _grow_i(feature, new_cap)
            left = _grow_i(left, new_cap)
            right = _grow_i(right, new_cap)
            threshold = _grow_f(threshold, new_cap)
            value = _grow_f(value, new_cap)
            cap = new_cap
        feature[total:total + nn] = t_feature[:nn]
        threshold[total:total + nn] = t_threshold[:nn]
        left[total:total + nn] = t_left[:nn]
        right[total:total + nn] = t_right[:nn]
        value[total:total + nn] = t_value[:nn]
        tree_start[rnd] = total
        predict_tree(X, feature, threshold, left, right, value, total, margin)
        predict_tree(X_val, feature, threshold, left, right, value, total, margin_val)
        total += nn
        work += n + n_val

        correct = 0
        for i in range(n_val):
            pred = 1.0 if margin_val[i] > 0.0 else 0.0
            if pred == y_val[i]:
                correct += 1
        acc = correct / n_val
        curve[rnd] = acc
        ll = 0.0
        for i in range(n):
            m = margin[i]
            # log(1 + exp(m)) - y m, computed stably
            if m > 0:
                ll += m + np.log1p(np.exp(-m)) - y[i] * m
            else:
                ll += np.log1p(np.exp(m)) - y[i] * m
        loss[rnd] = ll / n
        used = rnd + 1
        if acc > best_acc:
            best_acc = acc
            best_round = rnd
        elif patience > 0 and rnd - best_round >= patience:
            break

    tree_start[used] = total
    return (feature[:total].copy(), threshold[:total].copy(), left[:total].copy(),
            right[:total].copy(), value[:total].copy(), tree_start[:used + 1].copy(),
            curve[:used].copy(), loss[:used].copy(), used, work)


@njit(cache=True)
def _grow_i(a, new_cap):
    out = np.empty(new_cap, np.int64)
    out[:a.shape[0]] = a
    return out


@njit(cache=True)
def _grow_f(a, new_cap):
    out = np.empty(new_cap)
    out[:a.shape[0]] = a
    return out
