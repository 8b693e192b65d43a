"""Exact greedy regression trees used as boosting base learners.

Splits minimize the sum of squared errors of the targets: the gain of a
candidate is parent SSE minus the children's SSE, every midpoint between
consecutive distinct feature values is a candidate, and leaves predict the
target mean. Ties are broken toward the lowest feature index and then the
lowest threshold; a candidate must beat the incumbent by a relative margin
(``TIE_TOL_REL`` times the parent SSE) so the argmax is stable under
floating-point reassociation.

The growing loop runs level-by-level over columns presorted once per
training matrix, compiled with numba. Nodes are renumbered to preorder
before they leave this module.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._validation import as_float_matrix, as_float_vector, check_n_columns

NO_FEATURE = -1
TIE_TOL_REL = 1e-9


def presort_columns(x):
    """Per-column stable argsort, computed once per training matrix."""
    return np.argsort(x, axis=0, kind="stable").astype(np.int64)


@njit(cache=True)
def _grow(x, order, targets, max_depth, min_samples_leaf, tie_tol_rel):
    n, p = x.shape
    max_leaves = max(1, n // max(min_samples_leaf, 1))
    cap = 2 * max_leaves + 1
    if max_depth < 60:
        limit = 2 ** (max_depth + 1) + 1
        if limit < cap:
            cap = limit
    if cap < 3:
        cap = 3

    feature = np.full(cap, NO_FEATURE, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    gain = np.zeros(cap, np.float64)

    node_n = np.zeros(cap, np.int64)
    node_sum = np.zeros(cap, np.float64)
    node_sumsq = np.zeros(cap, np.float64)
    node_depth = np.zeros(cap, np.int64)
    node_tol = np.zeros(cap, np.float64)

    best_gain = np.zeros(cap, np.float64)
    best_feature = np.full(cap, -1, np.int64)
    best_threshold = np.zeros(cap, np.float64)

    run_count = np.zeros(cap, np.int64)
    run_sum = np.zeros(cap, np.float64)
    last_value = np.zeros(cap, np.float64)
    searchable = np.zeros(cap, np.bool_)

    # position[r] >= 0: the active node holding row r; < 0: parked in leaf -pos-1
    position = np.zeros(n, np.int64)
    total = 0.0
    total_sq = 0.0
    for r in range(n):
        total += targets[r]
        total_sq += targets[r] * targets[r]
    node_n[0] = n
    node_sum[0] = total
    node_sumsq[0] = total_sq
    n_nodes = 1

    frontier = np.empty(cap, np.int64)
    frontier[0] = 0
    n_frontier = 1

    while n_frontier > 0:
        # Phase A: finalize nodes that cannot split; mark the rest searchable.
        n_search = 0
        for i in range(n_frontier):
            nd = frontier[i]
            parent_sse = node_sumsq[nd] - node_sum[nd] * node_sum[nd] / node_n[nd]
            node_tol[nd] = tie_tol_rel * parent_sse
            if node_depth[nd] >= max_depth or node_n[nd] < 2 * min_samples_leaf:
                value[nd] = node_sum[nd] / node_n[nd]
                searchable[nd] = False
            else:
                searchable[nd] = True
                best_gain[nd] = 0.0
                best_feature[nd] = -1
                n_search += 1

        # Phase B: scan presorted columns, tracking per-node running stats.
        if n_search > 0:
            for j in range(p):
                for i in range(n_frontier):
                    nd = frontier[i]
                    run_count[nd] = 0
                    run_sum[nd] = 0.0
                for k in range(n):
                    r = order[k, j]
                    nd = position[r]
                    if nd < 0 or not searchable[nd]:
                        continue
                    v = x[r, j]
                    c = run_count[nd]
                    if c > 0 and v > last_value[nd]:
                        n_right = node_n[nd] - c
                        if c >= min_samples_leaf and n_right >= min_samples_leaf:
                            s_left = run_sum[nd]
                            s_right = node_sum[nd] - s_left
                            g = (
                                s_left * s_left / c
                                + s_right * s_right / n_right
                                - node_sum[nd] * node_sum[nd] / node_n[nd]
                            )
                            if g > best_gain[nd] + node_tol[nd] and g > node_tol[nd]:
                                best_gain[nd] = g
                                best_feature[nd] = j
                                best_threshold[nd] = 0.5 * (last_value[nd] + v)
                    run_count[nd] = c + 1
                    run_sum[nd] += targets[r]
                    last_value[nd] = v

        # Phase C: split or finalize each searchable node.
        next_frontier = np.empty(cap, np.int64)
        n_next = 0
        for i in range(n_frontier):
            nd = frontier[i]
            if not searchable[nd]:
                continue
            if best_feature[nd] < 0:
                value[nd] = node_sum[nd] / node_n[nd]
                searchable[nd] = False
                continue
            feature[nd] = best_feature[nd]
            threshold[nd] = best_threshold[nd]
            gain[nd] = best_gain[nd]
            lid = n_nodes
            rid = n_nodes + 1
            n_nodes += 2
            left[nd] = lid
            right[nd] = rid
            node_depth[lid] = node_depth[nd] + 1
            node_depth[rid] = node_depth[nd] + 1
            next_frontier[n_next] = lid
            next_frontier[n_next + 1] = rid
            n_next += 2

        # Phase D: park rows of finalized leaves, route the rest to children.
        for r in range(n):
            nd = position[r]
            if nd < 0:
                continue
            if left[nd] >= 0:
                if x[r, feature[nd]] <= threshold[nd]:
                    child = left[nd]
                else:
                    child = right[nd]
                position[r] = child
                node_n[child] += 1
                node_sum[child] += targets[r]
                node_sumsq[child] += targets[r] * targets[r]
            else:
                position[r] = -nd - 1

        frontier = next_frontier
        n_frontier = n_next

    leaf_of = np.empty(n, np.int64)
    for r in range(n):
        nd = position[r]
        leaf_of[r] = -nd - 1 if nd < 0 else nd
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        gain[:n_nodes],
        leaf_of,
    )


@njit(cache=True)
def _predict(x, feature, threshold, left, right, value):
    n = x.shape[0]
    out = np.empty(n, np.float64)
    for r in range(n):
        nd = 0
        while feature[nd] >= 0:
            if x[r, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[r] = value[nd]
    return out


def _to_preorder(feature, threshold, left, right, value, gain, leaf_of):
    """Renumber the level-order arrays produced by _grow into preorder."""
    n_nodes = len(feature)
    new_id = np.full(n_nodes, -1, np.int64)
    stack = [0]
    count = 0
    ordered = []
    while stack:
        nd = stack.pop()
        new_id[nd] = count
        count += 1
        ordered.append(nd)
        if feature[nd] >= 0:
            stack.append(right[nd])  # left child pops first: preorder
            stack.append(left[nd])
    ordered = np.array(ordered, dtype=np.int64)
    remap_child = lambda arr: np.where(arr[ordered] >= 0, new_id[arr[ordered]], -1)
    return (
        feature[ordered],
        threshold[ordered],
        remap_child(left),
        remap_child(right),
        value[ordered],
        gain[ordered],
        new_id[leaf_of],
    )


@dataclass
class RegressionTree:
    """Fitted tree stored as parallel preorder node arrays.

    ``feature[i] == NO_FEATURE`` marks a leaf; internal nodes route rows with
    ``x[feature] <= threshold`` to ``left``. ``gain`` holds each internal
    node's split gain (SSE reduction); leaves carry the mean target.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature == NO_FEATURE))

    def predict(self, X):
        X = as_float_matrix(X)
        return _predict(X, self.feature, self.threshold, self.left, self.right, self.value)

    def gain_by_feature(self, n_features):
        """Total split gain contributed by each feature index."""
        totals = np.zeros(n_features, dtype=np.float64)
        for nd in range(self.n_nodes):
            if self.feature[nd] >= 0:
                totals[self.feature[nd]] += self.gain[nd]
        return totals

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            feature=np.array(payload["feature"], dtype=np.int64),
            threshold=np.array(payload["threshold"], dtype=np.float64),
            left=np.array(payload["left"], dtype=np.int64),
            right=np.array(payload["right"], dtype=np.int64),
            value=np.array(payload["value"], dtype=np.float64),
            gain=np.array(payload["gain"], dtype=np.float64),
        )


def fit_tree(X, targets, max_depth, min_samples_leaf, order=None,
             tie_tol_rel=TIE_TOL_REL):
    """Fit one tree; returns (tree, leaf_index_of_each_training_row).

    ``order`` is the presorted column-index matrix from presort_columns;
    passing it avoids re-sorting when many trees share one matrix.
    """
    X = as_float_matrix(X)
    targets = as_float_vector(targets, "targets")
    if X.shape[0] != targets.shape[0]:
        raise ValueError(
            f"X has {X.shape[0]} rows but targets has {targets.shape[0]}"
        )
    if X.shape[0] < 1:
        raise ValueError("cannot fit a tree on an empty matrix")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if order is None:
        order = presort_columns(X)
    else:
        check_n_columns(order, X.shape[1], "order")
    parts = _grow(X, order, targets, max_depth, min_samples_leaf, tie_tol_rel)
    feature, threshold, left, right, value, gain, leaf_of = _to_preorder(*parts)
    tree = RegressionTree(
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        value=value,
        gain=gain,
    )
    return tree, leaf_of
