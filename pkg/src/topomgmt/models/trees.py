"""Decision trees: random forest and softmax gradient boosting.

Forest trees search every distinct value; boosted trees search rank-based
bins. Either way a threshold is a training value and the rule is
``x <= threshold``, so the learned partitions depend only on the ordering
of each feature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_THRESHOLD = np.finfo(float).max


class _TreeBuffer:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self) -> int:
        i = len(self.feature)
        self.feature.append(0)
        self.threshold.append(LEAF_THRESHOLD)
        self.left.append(i)
        self.right.append(i)
        self.value.append(0.0)
        return i


@dataclass
class Ensemble:
    """All trees of a model flattened into shared node arrays."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    depth: int

    @classmethod
    def from_buffers(cls, buffers: list[_TreeBuffer], depth: int) -> "Ensemble":
        parts = {k: [] for k in ("feature", "threshold", "left", "right", "value")}
        roots = []
        offset = 0
        for b in buffers:
            roots.append(offset)
            parts["feature"].extend(b.feature)
            parts["threshold"].extend(b.threshold)
            parts["left"].extend(i + offset for i in b.left)
            parts["right"].extend(i + offset for i in b.right)
            parts["value"].extend(b.value)
            offset += len(b.feature)
        return cls(np.array(parts["feature"], dtype=np.int64), np.array(parts["threshold"], dtype=float),
                   np.array(parts["left"], dtype=np.int64), np.array(parts["right"], dtype=np.int64),
                   np.array(parts["value"], dtype=float), np.array(roots, dtype=np.int64), int(depth))

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Leaf value reached in every tree, shape (n, n_trees)."""
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, len(self.roots))).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.depth):
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            node = np.where(go_left, self.left[node], self.right[node])
        return self.value[node]

    def leaf_values_one(self, x: np.ndarray) -> np.ndarray:
        node = self.roots
        for _ in range(self.depth):
            node = np.where(x[self.feature[node]] <= self.threshold[node], self.left[node], self.right[node])
        return self.value[node]

    def tree_depths(self) -> list[int]:
        out = []
        for r in self.roots:
            stack, deepest = [(int(r), 0)], 0
            while stack:
                i, dep = stack.pop()
                if self.left[i] == i:
                    deepest = max(deepest, dep)
                else:
                    stack += [(int(self.left[i]), dep + 1), (int(self.right[i]), dep + 1)]
            out.append(deepest)
        return out


# --------------------------------------------------------------------------
# classification trees (forest members)


def grow_classifier(X, y, n_classes, max_depth, max_features, rng, min_samples_leaf=1) -> _TreeBuffer:
    """Gini-split tree; leaves hold the majority class index (lowest on ties)."""
    d = X.shape[1]
    eye = np.eye(n_classes)
    buf = _TreeBuffer()
    stack = [(buf.add(), np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yr = y[rows]
        counts = np.bincount(yr, minlength=n_classes).astype(float)
        buf.value[node] = float(np.argmax(counts))
        n = len(rows)
        if depth >= max_depth or n < 2 * min_samples_leaf or (counts > 0).sum() <= 1:
            continue
        best = ((counts ** 2).sum() / n + 1e-12, -1, 0.0)
        nl = np.arange(1, n, dtype=float)
        nr = n - nl
        size_ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        for f in rng.choice(d, size=max_features, replace=False):
            vals = X[rows, f]
            o = np.argsort(vals, kind="stable")
            vs = vals[o]
            ok = size_ok & (vs[:-1] < vs[1:])
            if not ok.any():
                continue
            left = np.cumsum(eye[yr[o]], axis=0)[:-1]
            right = counts - left
            score = (left ** 2).sum(axis=1) / nl + (right ** 2).sum(axis=1) / nr
            score = np.where(ok, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best[0]:
                best = (score[i], int(f), float(vs[i]))
        _, f, thr = best
        if f < 0:
            continue
        go_left = X[rows, f] <= thr
        buf.feature[node] = f
        buf.threshold[node] = thr
        l, r = buf.add(), buf.add()
        buf.left[node], buf.right[node] = l, r
        stack.append((r, rows[~go_left], depth + 1))
        stack.append((l, rows[go_left], depth + 1))
    return buf


def fit_forest(X, y_idx, n_classes, n_trees, max_depth, rng, min_samples_leaf=1) -> Ensemble:
    n, d = X.shape
    max_features = max(1, int(np.sqrt(d)))
    buffers = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, n)
        buffers.append(grow_classifier(X[boot], y_idx[boot], n_classes, max_depth, max_features, rng,
                                       min_samples_leaf))
    return Ensemble.from_buffers(buffers, max_depth)


def forest_proba(ens: Ensemble, X: np.ndarray, n_classes: int) -> np.ndarray:
    votes = ens.leaf_values(X).astype(np.int64)
    n, t = votes.shape
    flat = (np.arange(n)[:, None] * n_classes + votes).ravel()
    return np.bincount(flat, minlength=n * n_classes).reshape(n, n_classes) / t


# --------------------------------------------------------------------------
# gradient boosting


@dataclass
class Bins:
    """Per-feature bins built from value ranks only.

    ``upper[f][j]`` is the largest training value in bin ``j`` of feature
    ``f``; a value falls into the first bin whose upper edge is >= it.
    """

    upper: list[np.ndarray]
    width: int

    @classmethod
    def build(cls, X: np.ndarray, max_bins: int) -> "Bins":
        upper = []
        n = X.shape[0]
        for col in X.T:
            uniq, counts = np.unique(col, return_counts=True)
            if len(uniq) <= max_bins:
                upper.append(uniq)
                continue
            start = np.cumsum(counts) - counts
            bucket = start * max_bins // n
            heavy = counts * max_bins >= n
            # a new bin opens at every bucket change and around every heavy value
            opens = np.ones(len(uniq), dtype=bool)
            opens[1:] = (bucket[1:] != bucket[:-1]) | heavy[1:] | heavy[:-1]
            last = np.append(np.flatnonzero(opens)[1:] - 1, len(uniq) - 1)
            upper.append(uniq[last])
        return cls(upper, max(len(u) for u in upper))

    def codes(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.intp)
        for f, u in enumerate(self.upper):
            out[:, f] = np.minimum(np.searchsorted(u, X[:, f], side="left"), len(u) - 1)
        return out


def _histograms(keys, rows, g, h, size):
    k = keys[rows].ravel()
    d = keys.shape[1]
    return (np.bincount(k, weights=np.repeat(g[rows], d), minlength=size),
            np.bincount(k, weights=np.repeat(h[rows], d), minlength=size),
            np.bincount(k, minlength=size))


def grow_gradient(bins: Bins, codes, keys, g, h, max_depth, reg_lambda, min_child_weight):
    """Newton regression tree over binned features.

    ``codes`` holds each row's bin per feature and ``keys`` the same codes
    offset by ``feature * bins.width``. Returns the tree and each training
    row's leaf value.
    """
    n, d = codes.shape
    width = bins.width
    size = d * width
    # splitting after the last occupied bin of a feature is never allowed
    has_next = np.zeros((d, width), dtype=bool)
    for f, u in enumerate(bins.upper):
        has_next[f, : len(u) - 1] = True
    buf = _TreeBuffer()
    row_value = np.zeros(n)
    stack = [(buf.add(), np.arange(n), 0, None)]
    while stack:
        node, rows, depth, hist = stack.pop()
        G, H = g[rows].sum(), h[rows].sum()
        value = -G / (H + reg_lambda)
        buf.value[node] = value
        if depth >= max_depth or len(rows) < 2:
            row_value[rows] = value
            continue
        if hist is None:
            hist = _histograms(keys, rows, g, h, size)
        hg, hh, hc = (a.reshape(d, width) for a in hist)
        GL = np.cumsum(hg, axis=1)
        HL = np.cumsum(hh, axis=1)
        CL = np.cumsum(hc, axis=1)
        GR, HR = G - GL, H - HL
        gain = GL ** 2 / (HL + reg_lambda) + GR ** 2 / (HR + reg_lambda) - G ** 2 / (H + reg_lambda)
        ok = has_next & (hc > 0) & (CL < len(rows)) & (HL >= min_child_weight) & (HR >= min_child_weight)
        gain = np.where(ok, gain, -np.inf)
        f, j = divmod(int(np.argmax(gain)), width)
        if not gain[f, j] > 1e-12:
            row_value[rows] = value
            continue
        buf.feature[node] = f
        buf.threshold[node] = float(bins.upper[f][j])
        go_left = codes[rows, f] <= j
        left, right = rows[go_left], rows[~go_left]
        l, r = buf.add(), buf.add()
        buf.left[node], buf.right[node] = l, r
        hl = hr = None
        if depth + 1 < max_depth:
            # build the smaller child's histogram, derive the sibling by subtraction
            small, big = (left, right) if len(left) <= len(right) else (right, left)
            hs = _histograms(keys, small, g, h, size)
            hb = tuple(p - q for p, q in zip(hist, hs))
            hl, hr = (hs, hb) if small is left else (hb, hs)
        stack.append((r, right, depth + 1, hr))
        stack.append((l, left, depth + 1, hl))
    return buf, row_value


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(F: np.ndarray, y_idx: np.ndarray) -> float:
    z = F - F.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y_idx)), y_idx].mean())


def fit_gbt(X, y_idx, n_classes, n_trees, max_depth, learning_rate, reg_lambda, min_child_weight,
            max_bins=256, max_halvings=20):
    """Boost one tree per class per round on softmax cross-entropy.

    A round's step is halved until the training loss does not rise, so the
    recorded loss history is non-increasing.
    """
    bins = Bins.build(X, max_bins)
    codes = bins.codes(X)
    keys = codes + np.arange(X.shape[1]) * bins.width
    n = X.shape[0]
    prior = np.bincount(y_idx, minlength=n_classes) / n
    base = np.log(np.maximum(prior, 1e-12))
    base -= base.mean()
    F = np.tile(base, (n, 1))
    Y = np.eye(n_classes)[y_idx]
    history = [cross_entropy(F, y_idx)]
    buffers = []
    for _ in range(n_trees):
        P = softmax(F)
        G = P - Y
        Hs = np.maximum(P * (1.0 - P), 1e-16)
        round_bufs, update = [], np.zeros_like(F)
        for k in range(n_classes):
            buf, rv = grow_gradient(bins, codes, keys, G[:, k], Hs[:, k], max_depth, reg_lambda,
                                     min_child_weight)
            round_bufs.append(buf)
            update[:, k] = rv
        step = learning_rate
        for _ in range(max_halvings):
            loss = cross_entropy(F + step * update, y_idx)
            if loss <= history[-1]:
                break
            step *= 0.5
        else:
            step, loss = 0.0, history[-1]
        for buf in round_bufs:
            buf.value = [v * step for v in buf.value]
        buffers.extend(round_bufs)
        F = F + step * update
        history.append(loss)
    return Ensemble.from_buffers(buffers, max_depth), base, history


def gbt_raw(ens: Ensemble, base: np.ndarray, X: np.ndarray) -> np.ndarray:
    k = len(base)
    vals = ens.leaf_values(X)
    return base + vals.reshape(X.shape[0], -1, k).sum(axis=1)
