"""Relation graph over knowledge-graph vectors, graph features, and prototypes.

The graph is a k-nearest-neighbor graph over fixed relation vectors (one
per source relation). One round of weighted, self-inclusive neighbor
averaging followed by a fixed affine projection yields per-relation graph
features h_r, which seed prototype initialization

    v_r = m_r + h_r - m

and act as the Gaussian prior mean in the stochastic Langevin prototype
update. Graph and features are immutable after construction; the
prototype set is mutated only by the training thread.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderHead, encode

GRAPH_META_NAME = "graph.json"
TRANSE_NAME = "transe.f32"


class GraphFormatError(Exception):
    """A graph directory violates the on-disk format contract."""


@dataclass
class RelationGraph:
    """k-NN graph over relation vectors with Gaussian edge weights."""

    relation_names: list[str]
    transe_vectors: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray
    k: int

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        """Outgoing edges (i, j, w_ij); every node has exactly k of them."""
        out = []
        for i in range(self.n_relations):
            for j, w in zip(self.neighbors[i], self.weights[i]):
                out.append((i, int(j), float(w)))
        return out


def build_knn_graph(transe_vectors: np.ndarray, k: int,
                    relation_names: list[str] | None = None) -> RelationGraph:
    """Link every relation to its k nearest neighbors by Euclidean distance.

    Edge weight is a Gaussian kernel of squared distance,
    w_ij = exp(-||t_i - t_j||^2 / tau), with tau the median squared
    neighbor distance over all selected edges. Ties are broken by lowest
    index (stable sort); self-loops are excluded.
    """
    t = np.asarray(transe_vectors, dtype=np.float64)
    n = t.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < n_relations, got k={k}, n={n}")
    if relation_names is None:
        relation_names = [str(i) for i in range(n)]
    if len(relation_names) != n:
        raise ValueError("relation_names length does not match vector count")

    sq = np.sum(t * t, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (t @ t.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    neighbors = order[:, :k]
    neigh_d2 = np.take_along_axis(d2, neighbors, axis=1)

    tau = float(np.median(neigh_d2))
    if tau > 0.0:
        weights = np.exp(-neigh_d2 / tau)
    else:
        weights = np.ones_like(neigh_d2)
    return RelationGraph(
        relation_names=list(relation_names),
        transe_vectors=t,
        neighbors=neighbors.astype(np.int64),
        weights=weights,
        k=k,
    )


def graph_features(graph: RelationGraph, projection: EncoderHead) -> np.ndarray:
    """Per-relation feature vectors h_r.

    One round of weighted self-inclusive neighbor averaging,

        a_r = (t_r + sum_j w_rj t_j) / (1 + sum_j w_rj),

    then the fixed affine projection into the embedding space.
    """
    t = graph.transe_vectors
    if projection.d_in != t.shape[1]:
        raise ValueError(
            f"projection expects input dim {projection.d_in}, graph vectors have {t.shape[1]}"
        )
    neigh_sum = np.einsum("ik,ikd->id", graph.weights, t[graph.neighbors])
    denom = 1.0 + graph.weights.sum(axis=1)
    agg = (t + neigh_sum) / denom[:, None]
    return encode(projection, agg)


def write_graph(directory_path: str, relation_names: list[str],
                transe_vectors: np.ndarray, k: int) -> None:
    """Write graph.json + transe.f32. Edges are not stored; they are
    rebuilt deterministically from the vectors and k."""
    vectors = np.asarray(transe_vectors)
    if vectors.ndim != 2 or vectors.shape[0] != len(relation_names):
        raise GraphFormatError("vector rows must match relation name count")
    os.makedirs(directory_path, exist_ok=True)
    meta = {"relations": list(relation_names), "dim": int(vectors.shape[1]), "k": int(k)}
    with open(os.path.join(directory_path, GRAPH_META_NAME), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")
    vectors.astype("<f4").tofile(os.path.join(directory_path, TRANSE_NAME))


def load_graph(directory_path: str, k: int | None = None) -> RelationGraph:
    """Load a graph directory and materialize k-NN edges deterministically."""
    meta_path = os.path.join(directory_path, GRAPH_META_NAME)
    vec_path = os.path.join(directory_path, TRANSE_NAME)
    for p in (meta_path, vec_path):
        if not os.path.isfile(p):
            raise GraphFormatError(f"missing file: {p}")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    names = [str(r) for r in meta["relations"]]
    dim = int(meta["dim"])
    nbytes = os.path.getsize(vec_path)
    if nbytes != len(names) * dim * 4:
        raise GraphFormatError(
            f"byte-count mismatch: transe.f32 has {nbytes} bytes, expected "
            f"{len(names) * dim * 4} for {len(names)}x{dim} f32"
        )
    vectors = np.fromfile(vec_path, dtype="<f4").reshape(len(names), dim)
    if not np.all(np.isfinite(vectors)):
        raise GraphFormatError("transe vectors contain non-finite values")
    return build_knn_graph(vectors, int(meta["k"]) if k is None else int(k), names)


@dataclass
class PrototypeSet:
    """Per-relation prototypes plus cached means and graph features.

    Row r of every matrix corresponds to relation_ids[r]. ``v`` holds the
    live prototypes; ``class_means`` / ``global_mean`` cache the encoded
    means behind the initialization rule; ``features`` holds h_r.
    """

    relation_ids: np.ndarray
    v: np.ndarray
    class_means: np.ndarray
    global_mean: np.ndarray
    features: np.ndarray
    prior_std: float = 1.0
    _row_of: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.prior_std <= 0:
            raise ValueError("prior_std must be positive")
        self._row_of = {int(r): i for i, r in enumerate(self.relation_ids)}

    def rows(self, relation_ids) -> np.ndarray:
        return np.array([self._row_of[int(r)] for r in np.atleast_1d(relation_ids)])

    def snapshot(self) -> "PrototypeSet":
        return PrototypeSet(self.relation_ids.copy(), self.v.copy(),
                            self.class_means.copy(), self.global_mean.copy(),
                            self.features.copy(), self.prior_std)


def _class_means(dataset, head: EncoderHead, subsample: int | None,
                 rng: np.random.Generator | None):
    """Encoded per-relation means m_r and global mean m.

    With a subsample budget, each relation keeps a proportional share
    (at least one sample); the global mean is taken over the same rows
    so the cancellation identity stays exact for the sampled set.
    """
    n_rel = len(dataset.relation_names)
    picked = []
    for r in range(n_rel):
        idx = dataset.relation_indices(r)
        if subsample is not None and subsample < dataset.count:
            take = max(1, int(round(len(idx) * subsample / dataset.count)))
            if take < len(idx):
                if rng is None:
                    raise ValueError("subsampled means need an rng")
                idx = rng.choice(idx, size=take, replace=False)
        picked.append(idx)

    means = np.empty((n_rel, head.d_out))
    total = np.zeros(head.d_out)
    total_n = 0
    for r, idx in enumerate(picked):
        emb = encode(head, dataset.vectors[idx])
        means[r] = emb.mean(axis=0)
        total += emb.sum(axis=0)
        total_n += len(idx)
    return means, total / total_n


def init_prototypes(dataset, features: np.ndarray, head: EncoderHead,
                    prior_std: float = 1.0, subsample: int | None = None,
                    rng: np.random.Generator | None = None) -> PrototypeSet:
    """Initialize v_r = m_r + h_r - m over the dataset's relation vocabulary.

    ``features`` must hold one h_r row per dataset relation, in relation-id
    order (rows of the output are aligned the same way).
    """
    n_rel = len(dataset.relation_names)
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (n_rel, head.d_out):
        raise ValueError(
            f"features must be {n_rel}x{head.d_out}, got {features.shape}"
        )
    means, global_mean = _class_means(dataset, head, subsample, rng)
    # Grouped as m_r + (h_r - m) so that h_r == m cancels exactly.
    v = means + (features - global_mean[None, :])
    return PrototypeSet(
        relation_ids=np.arange(n_rel, dtype=np.int64),
        v=v,
        class_means=means,
        global_mean=global_mean,
        features=features.copy(),
        prior_std=prior_std,
    )


def refresh_means(protos: PrototypeSet, dataset, head: EncoderHead,
                  subsample: int | None = None,
                  rng: np.random.Generator | None = None) -> None:
    """Recompute the cached means under the current head (v untouched)."""
    protos.class_means, protos.global_mean = _class_means(dataset, head, subsample, rng)


def reinit_rows(protos: PrototypeSet, relation_ids) -> None:
    """Reset v_r = m_r + h_r - m for the given relations from the cached means."""
    rows = protos.rows(relation_ids)
    protos.v[rows] = protos.class_means[rows] + (protos.features[rows]
                                                 - protos.global_mean[None, :])


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def support_likelihood(protos: PrototypeSet, support_embeddings: np.ndarray,
                       labels: np.ndarray,
                       relations: np.ndarray | None = None) -> float:
    """Log-probability of the support labels under dot-product softmax.

    sum_s log softmax_{r in R'}(x_s . v_r) evaluated at r_s, computed with
    max-subtraction. R' defaults to the distinct labels present.
    """
    x = np.asarray(support_embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    rel = np.unique(labels) if relations is None else np.asarray(relations)
    rows = protos.rows(rel)
    local = {int(r): i for i, r in enumerate(rel)}
    lab = np.array([local[int(l)] for l in labels])
    logits = x @ protos.v[rows].T
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(logp[np.arange(len(lab)), lab].sum())


def log_posterior_and_grad(v: np.ndarray, support_embeddings: np.ndarray,
                           label_rows: np.ndarray, features: np.ndarray,
                           prior_std: float):
    """Episode log-posterior of prototypes and its gradient.

    log p(v | X, R, G) = sum_s log softmax(x_s . v)[r_s]
                         - sum_r ||v_r - h_r||^2 / (2 sigma^2)  (+ const)

    ``v``/``features`` are restricted to the episode relations R';
    ``label_rows`` index into those rows.
    """
    x = np.asarray(support_embeddings, dtype=np.float64)
    logits = x @ v.T
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ll = float(logp[np.arange(len(label_rows)), label_rows].sum())

    p = _softmax_rows(logits)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(label_rows)), label_rows] = 1.0
    grad = (onehot - p).T @ x

    diff = v - features
    sig2 = prior_std * prior_std
    value = ll - float(np.sum(diff * diff)) / (2.0 * sig2)
    grad = grad - diff / sig2
    return value, grad


def langevin_update(protos: PrototypeSet, support_embeddings: np.ndarray,
                    labels: np.ndarray, epsilon: float, steps: int,
                    rng: np.random.Generator,
                    noise: np.ndarray | None = None) -> PrototypeSet:
    """Stochastic Langevin refinement of the episode prototypes, in place.

    For each step,

        v <- v + (eps/2) * grad log p(v | X, R, G) + sqrt(eps) * z,

    with z standard normal per coordinate (i.i.d. per step). Prototypes of
    relations outside the episode are untouched. ``noise``, when given,
    must be (steps, |R'|, d) and overrides the rng draw (used by tests to
    inject z = 0).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    labels = np.asarray(labels)
    rel = np.unique(labels)
    rows = protos.rows(rel)
    local = {int(r): i for i, r in enumerate(rel)}
    label_rows = np.array([local[int(l)] for l in labels])

    v = protos.v[rows].copy()
    h = protos.features[rows]
    for s in range(steps):
        _, grad = log_posterior_and_grad(v, support_embeddings, label_rows, h,
                                         protos.prior_std)
        z = noise[s] if noise is not None else rng.standard_normal(v.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            v = v + 0.5 * epsilon * grad + np.sqrt(epsilon) * z
        if not np.all(np.isfinite(v)):
            raise ValueError(
                f"non-finite prototype after Langevin step {s + 1}/{steps} "
                f"(eps={epsilon}, relations={rel.tolist()})"
            )
    protos.v[rows] = v
    return protos
