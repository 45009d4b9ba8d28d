"""Greedy exemplar clustering in embedding space and per-cluster summary
tables of event and at-risk counts.

The clustering is a single sequential pass: the first point becomes an
exemplar; each later point joins its nearest exemplar when the Euclidean
distance is within epsilon, otherwise it becomes a new exemplar itself. The
pass is order-dependent; input order is used unless a shuffle seed is given,
and nearest-exemplar ties break toward the lowest exemplar index.
"""

from dataclasses import dataclass

import numpy as np

from .core import Cohort, EventTimeGrid, risk_event_counts
from .errors import ShapeMismatch


def tau_from_min_kernel_weight(min_weight: float) -> float:
    """Neighborhood radius such that kernel weights below ``min_weight`` are
    dropped: tau = sqrt(-log(min_weight))."""
    if not 0.0 < min_weight <= 1.0:
        raise ValueError("min kernel weight must lie in (0, 1]")
    return float(np.sqrt(-np.log(min_weight)))


def epsilon_net_cluster(embeddings: np.ndarray, epsilon: float, shuffle_seed=None):
    """Sequential greedy epsilon-net pass.

    Returns (exemplar_ids, assignments): exemplar_ids are indices into the
    input rows in creation order; assignments[i] is the exemplar id owning
    point i. epsilon = 0 gives every distinct point its own cluster;
    epsilon = inf gives a single cluster.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise ShapeMismatch("embeddings must be a nonempty (n, d) array")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    n = E.shape[0]
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)

    eps_sq = epsilon * epsilon
    exemplar_ids = [int(order[0])]
    exemplar_rows = [E[order[0]]]
    assignments = np.empty(n, dtype=np.int64)
    assignments[order[0]] = order[0]
    for pos in range(1, n):
        i = int(order[pos])
        ex = np.asarray(exemplar_rows)
        diff = ex - E[i]
        sq = np.einsum("qd,qd->q", diff, diff)
        nearest = int(np.argmin(sq))           # argmin keeps the lowest index on ties
        if sq[nearest] <= eps_sq:
            assignments[i] = exemplar_ids[nearest]
        else:
            exemplar_ids.append(i)
            exemplar_rows.append(E[i])
            assignments[i] = i
    return np.asarray(exemplar_ids, dtype=np.int64), assignments


def summarize_clusters(cohort_pre: Cohort, grid: EventTimeGrid,
                       assignments: np.ndarray, exemplar_ids: np.ndarray):
    """Per-cluster event counts (Q, L, m) and at-risk counts (Q, L).

    The cohort must already be preprocessed on ``grid``; summing the tables
    over clusters reproduces the population counts exactly.
    """
    exemplar_ids = np.asarray(exemplar_ids, dtype=np.int64)
    assignments = np.asarray(assignments, dtype=np.int64)
    Q, L, m = exemplar_ids.size, len(grid), cohort_pre.m
    d_cluster = np.zeros((Q, L, m), dtype=np.float64)
    n_cluster = np.zeros((Q, L), dtype=np.float64)
    for qi, q in enumerate(exemplar_ids):
        members = np.flatnonzero(assignments == q)
        d, n = risk_event_counts(cohort_pre.subset(members), grid)
        d_cluster[qi] = d
        n_cluster[qi] = n
    return d_cluster, n_cluster


@dataclass(frozen=True)
class ClusterModel:
    """Exemplar embeddings plus per-cluster summary tables.

    ``exemplar_ids`` are training indices in creation order;
    ``assignments[i]`` is the exemplar id of training point i. ``tau`` is the
    prediction-time neighborhood radius in embedding space.
    """

    exemplar_ids: np.ndarray
    exemplar_embeddings: np.ndarray
    assignments: np.ndarray
    d_cluster: np.ndarray
    n_cluster: np.ndarray
    epsilon: float
    tau: float

    def __post_init__(self):
        ids = np.asarray(self.exemplar_ids, dtype=np.int64)
        emb = np.asarray(self.exemplar_embeddings, dtype=np.float64)
        asg = np.asarray(self.assignments, dtype=np.int64)
        d = np.asarray(self.d_cluster, dtype=np.float64)
        n = np.asarray(self.n_cluster, dtype=np.float64)
        Q = ids.size
        if emb.shape[0] != Q or d.shape[0] != Q or n.shape[0] != Q:
            raise ShapeMismatch("per-exemplar arrays disagree on cluster count")
        if d.shape[:2] != n.shape:
            raise ShapeMismatch("d_cluster and n_cluster disagree on (Q, L)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not set(np.unique(asg)).issubset(set(ids.tolist())):
            raise ValueError("every assignment must reference an exemplar")
        object.__setattr__(self, "exemplar_ids", ids)
        object.__setattr__(self, "exemplar_embeddings", emb)
        object.__setattr__(self, "assignments", asg)
        object.__setattr__(self, "d_cluster", d)
        object.__setattr__(self, "n_cluster", n)

    @property
    def num_clusters(self) -> int:
        return int(self.exemplar_ids.size)

    def cluster_sizes(self) -> np.ndarray:
        return np.array(
            [(self.assignments == q).sum() for q in self.exemplar_ids], dtype=np.int64
        )


def build_cluster_model(embeddings, cohort_pre, grid, epsilon, tau,
                        shuffle_seed=None) -> ClusterModel:
    """Cluster training embeddings and attach their summary tables."""
    exemplar_ids, assignments = epsilon_net_cluster(embeddings, epsilon, shuffle_seed)
    d_cluster, n_cluster = summarize_clusters(cohort_pre, grid, assignments, exemplar_ids)
    E = np.asarray(embeddings, dtype=np.float64)
    return ClusterModel(
        exemplar_ids=exemplar_ids,
        exemplar_embeddings=E[exemplar_ids],
        assignments=assignments,
        d_cluster=d_cluster,
        n_cluster=n_cluster,
        epsilon=float(epsilon),
        tau=float(tau),
    )


def neighbors_within_tau(query_embedding: np.ndarray, model: ClusterModel) -> np.ndarray:
    """Positions (into the exemplar list) of exemplars within tau of the query,
    in exemplar-index order."""
    q = np.asarray(query_embedding, dtype=np.float64)
    if q.shape != (model.exemplar_embeddings.shape[1],):
        raise ShapeMismatch("query embedding dimension mismatch")
    diff = model.exemplar_embeddings - q
    sq = np.einsum("qd,qd->q", diff, diff)
    return np.flatnonzero(sq <= model.tau * model.tau)
