"""CART trees grown to purity, compiled with numba.

A tree is a set of flat arrays indexed by node id. Internal nodes send a row
left when ``x[feature] <= threshold`` (numeric) or when bit ``x[feature]`` of
``cat_mask`` is set (categorical). Leaves have ``feature == -1`` and carry the
weighted mean (regression) or weighted class counts (classification).

Rows enter with integer weights so a bootstrap resample never materializes
duplicate rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_MULT = np.uint64(2685821657736338717)


@numba.njit(cache=True, nogil=True)
def _next(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * _MULT) >> np.uint64(11)


@numba.njit(cache=True, nogil=True)
def _randint(state, k):
    return np.int64(_next(state) % np.uint64(k))


@numba.njit(cache=True, nogil=True)
def _score(is_clf, K, s, s2, wsum):
    # larger is purer; parent score minus children score is the impurity decrease
    if is_clf:
        t = 0.0
        for c in range(K):
            t += s[c] * s[c]
        return t / wsum
    return s[0] * s[0] / wsum


@numba.njit(cache=True, nogil=True)
def _score_rest(is_clf, K, total, part, wsum):
    # _score of (total - part) without allocating
    if is_clf:
        t = 0.0
        for c in range(K):
            d = total[c] - part[c]
            t += d * d
        return t / wsum
    d = total[0] - part[0]
    return d * d / wsum


@numba.njit(cache=True, nogil=True)
def build_tree(X, y, w, is_clf, n_classes, n_cats, max_features, seed):
    n, p = X.shape
    K = n_classes if is_clf else 1
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    cat_mask = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, K))
    weight = np.zeros(cap)
    importance = np.zeros(p)

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    for _ in range(4):
        _next(state)

    samples = np.arange(n)
    features = np.arange(p)
    vals = np.empty(n)
    order_buf = np.empty(n, dtype=np.int64)
    sL = np.zeros(K)
    sN = np.zeros(K)
    cat_s = np.zeros((64, K))
    cat_w = np.zeros(64)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    sp = 1
    node_count = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]

        wsum = 0.0
        sN[:] = 0.0
        s2 = 0.0
        for t in range(lo, hi):
            r = samples[t]
            wsum += w[r]
            if is_clf:
                sN[np.int64(y[r])] += w[r]
            else:
                sN[0] += w[r] * y[r]
                s2 += w[r] * y[r] * y[r]
        weight[node] = wsum
        if is_clf:
            for c in range(K):
                value[node, c] = sN[c]
        else:
            value[node, 0] = sN[0] / wsum

        pure = True
        if is_clf:
            nonzero = 0
            for c in range(K):
                if sN[c] > 0:
                    nonzero += 1
            pure = nonzero <= 1
        else:
            y0 = y[samples[lo]]
            for t in range(lo + 1, hi):
                if y[samples[t]] != y0:
                    pure = False
                    break
        if pure or hi - lo < 2:
            continue

        parent = _score(is_clf, K, sN, s2, wsum)
        best_gain = -np.inf
        best_f = -1
        best_thr = 0.0
        best_mask = np.int64(0)
        visited = 0
        for fi in range(p):
            r = fi + _randint(state, p - fi)
            tmp = features[fi]
            features[fi] = features[r]
            features[r] = tmp
            f = features[fi]

            vmin = np.inf
            vmax = -np.inf
            for t in range(lo, hi):
                v = X[samples[t], f]
                if v < vmin:
                    vmin = v
                if v > vmax:
                    vmax = v
            if vmin == vmax:
                continue
            visited += 1

            if n_cats[f] > 0:
                C = n_cats[f]
                cat_s[:C, :] = 0.0
                cat_w[:C] = 0.0
                for t in range(lo, hi):
                    rr = samples[t]
                    c = np.int64(X[rr, f])
                    cat_w[c] += w[rr]
                    if is_clf:
                        cat_s[c, np.int64(y[rr])] += w[rr]
                    else:
                        cat_s[c, 0] += w[rr] * y[rr]
                for m in range(1, 1 << (C - 1)):
                    wl = 0.0
                    sL[:] = 0.0
                    for c in range(C):
                        if (m >> c) & 1:
                            wl += cat_w[c]
                            for k in range(K):
                                sL[k] += cat_s[c, k]
                    wr = wsum - wl
                    if wl <= 0.0 or wr <= 0.0:
                        continue
                    gain = _score(is_clf, K, sL, 0.0, wl) + _score_rest(is_clf, K, sN, sL, wr) - parent
                    if gain > best_gain or (gain == best_gain and f < best_f):
                        best_gain = gain
                        best_f = f
                        best_mask = m
            else:
                m_n = hi - lo
                for t in range(m_n):
                    order_buf[t] = samples[lo + t]
                    vals[t] = X[order_buf[t], f]
                order = np.argsort(vals[:m_n])
                wl = 0.0
                sL[:] = 0.0
                for t in range(m_n - 1):
                    rr = order_buf[order[t]]
                    wl += w[rr]
                    if is_clf:
                        sL[np.int64(y[rr])] += w[rr]
                    else:
                        sL[0] += w[rr] * y[rr]
                    a = vals[order[t]]
                    b = vals[order[t + 1]]
                    if a == b:
                        continue
                    wr = wsum - wl
                    gain = _score(is_clf, K, sL, 0.0, wl) + _score_rest(is_clf, K, sN, sL, wr) - parent
                    if gain > best_gain or (gain == best_gain and f < best_f):
                        thr = a + (b - a) / 2.0
                        if thr >= b:
                            thr = a
                        best_gain = gain
                        best_f = f
                        best_thr = thr
                        best_mask = 0
            if visited >= max_features:
                break

        if best_f < 0:
            continue

        # partition samples[lo:hi] in place: left block first
        i = lo
        j = hi - 1
        is_cat = n_cats[best_f] > 0
        while i <= j:
            v = X[samples[i], best_f]
            if is_cat:
                go_left = (best_mask >> np.int64(v)) & 1 == 1
            else:
                go_left = v <= best_thr
            if go_left:
                i += 1
            else:
                tmp = samples[i]
                samples[i] = samples[j]
                samples[j] = tmp
                j -= 1
        mid = i
        feature[node] = best_f
        threshold[node] = best_thr
        cat_mask[node] = best_mask
        importance[best_f] += max(best_gain, 0.0)
        left[node] = node_count
        right[node] = node_count + 1
        # push right first so the left subtree is numbered depth-first
        st_node[sp] = node_count + 1
        st_lo[sp] = mid
        st_hi[sp] = hi
        sp += 1
        st_node[sp] = node_count
        st_lo[sp] = lo
        st_hi[sp] = mid
        sp += 1
        node_count += 2

    nc = node_count
    return (feature[:nc].copy(), threshold[:nc].copy(), cat_mask[:nc].copy(), left[:nc].copy(),
            right[:nc].copy(), value[:nc].copy(), weight[:nc].copy(), importance)


@numba.njit(cache=True, nogil=True)
def apply_tree(feature, threshold, cat_mask, left, right, n_cats, X):
    """Leaf id reached by each row of X."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            x = X[r, f]
            if n_cats[f] > 0:
                c = np.int64(x)
                go_left = c >= 0 and c < 63 and (cat_mask[node] >> c) & 1 == 1
            else:
                go_left = x <= threshold[node]
            node = left[node] if go_left else right[node]
        out[r] = node
    return out


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray, n_cats: np.ndarray) -> np.ndarray:
        return apply_tree(self.feature, self.threshold, self.cat_mask, self.left, self.right,
                          n_cats, np.ascontiguousarray(X, dtype=np.float64))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "cat_mask": self.cat_mask.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "weight": self.weight.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            cat_mask=np.asarray(d["cat_mask"], dtype=np.int64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64).reshape(len(d["feature"]), -1),
            weight=np.asarray(d["weight"], dtype=np.float64),
        )


def grow_tree(X, y, w, *, is_clf: bool, n_classes: int, n_cats: np.ndarray,
              max_features: int, seed: int) -> tuple[Tree, np.ndarray]:
    """Grow one tree on rows with positive weight ``w``; returns (tree, raw importance)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if np.any(n_cats > 63):
        raise ValueError("categorical features support at most 63 levels")
    out = build_tree(X, y, w, bool(is_clf), int(max(n_classes, 1)), np.asarray(n_cats, dtype=np.int64),
                     int(max_features), np.uint64(seed))
    *arrays, importance = out
    return Tree(*arrays), importance
