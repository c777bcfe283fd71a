"""User-item bipartite graph, edge dropout, item kNN graph and
parameter-free propagation."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .exceptions import DimensionError, InvalidInputError


def normalized_adjacency(pairs, num_users, num_items):
    """Symmetric-normalized bipartite adjacency over ``num_users + num_items``
    nodes; each edge weighs ``1 / sqrt(deg_u * deg_i)``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = num_users + num_items
    rows = np.concatenate([pairs[:, 0], pairs[:, 1] + num_users])
    cols = np.concatenate([pairs[:, 1] + num_users, pairs[:, 0]])
    a = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sparse.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def drop_edges(pairs, rate, rng):
    """Keep each undirected edge independently with probability ``1 - rate``."""
    if rate <= 0.0:
        return pairs
    keep = rng.random(len(pairs)) >= rate
    return pairs[keep]


def knn_graph(features, k):
    """Binarized cosine kNN graph (self excluded), row-normalized.

    Ties in similarity are broken toward the lower item index.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise InvalidInputError("kNN graph needs at least two items")
    k = min(int(k), n - 1)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    nbrs = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    g = sparse.csr_matrix((np.full(n * k, 1.0 / k), (rows, nbrs.ravel())), shape=(n, n))
    g.sort_indices()
    return g


def item_item_graph(raw_v, raw_t, k=10, alpha=0.5):
    """Convex combination of per-modality kNN graphs; rows sum to 1."""
    if raw_v.shape[0] != raw_t.shape[0]:
        raise DimensionError("visual and textual features cover different item counts")
    g = alpha * knn_graph(raw_v, k) + (1.0 - alpha) * knn_graph(raw_t, k)
    g = g.tocsr()
    g.sort_indices()
    return g


@dataclass
class GraphSet:
    """Graphs used by the model.

    ``adjacency`` is the current (possibly edge-dropped) normalized
    user-item matrix; ``full_adjacency`` keeps every training edge and is
    used for evaluation.
    """

    num_users: int
    num_items: int
    train_pairs: np.ndarray
    full_adjacency: sparse.csr_matrix
    item_item: Optional[sparse.csr_matrix]
    alpha: float = 0.5
    edge_dropout_rate: float = 0.1
    adjacency: Optional[sparse.csr_matrix] = None

    def __post_init__(self):
        if not 0.0 <= self.edge_dropout_rate < 1.0:
            raise InvalidInputError(f"edge_dropout_rate must lie in [0, 1), got {self.edge_dropout_rate}")
        if self.adjacency is None:
            self.adjacency = self.full_adjacency

    @classmethod
    def build(cls, train_pairs, num_users, num_items, raw_v=None, raw_t=None,
              knn_k=10, alpha=0.5, edge_dropout_rate=0.1):
        item_item = None
        if raw_v is not None and raw_t is not None and knn_k > 0:
            item_item = item_item_graph(raw_v, raw_t, knn_k, alpha)
        train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
        return cls(
            num_users=num_users,
            num_items=num_items,
            train_pairs=train_pairs,
            full_adjacency=normalized_adjacency(train_pairs, num_users, num_items),
            item_item=item_item,
            alpha=alpha,
            edge_dropout_rate=edge_dropout_rate,
        )

    def resample_dropout(self, rng):
        kept = drop_edges(self.train_pairs, self.edge_dropout_rate, rng)
        if kept is self.train_pairs:
            self.adjacency = self.full_adjacency
        else:
            self.adjacency = normalized_adjacency(kept, self.num_users, self.num_items)
        return self.adjacency

    def use_full(self):
        self.adjacency = self.full_adjacency


def propagate_layers(x0, adjacency, layers):
    """Mean of ``x0, A x0, ..., A^L x0``.

    ``adjacency`` is symmetric, so the same call maps an output gradient back
    to the layer-0 gradient.
    """
    acc = np.array(x0, dtype=np.float64)
    x = acc
    for _ in range(layers):
        x = adjacency @ x
        acc = acc + x
    return acc / (layers + 1)
