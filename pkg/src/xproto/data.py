"""On-disk dataset format, in-memory sample tables, and episodic sampling.

A dataset directory holds three files:

    meta.json       {"count": int, "dim": int, "domain": "source"|"target",
                     "relations": [str, ...], "labeled": bool}
    embeddings.f32  count x dim little-endian IEEE-754 float32, row-major
    labels.u32      count little-endian uint32 relation indices

Datasets are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("xproto.data")

DOMAINS = ("source", "target")

META_NAME = "meta.json"
EMBEDDINGS_NAME = "embeddings.f32"
LABELS_NAME = "labels.u32"


class DataFormatError(Exception):
    """A dataset directory violates the on-disk format contract."""


@dataclass(frozen=True)
class EmbeddedSample:
    """One embedded sentence: a base vector, its relation id, and domain tag."""

    sample_id: int
    base_vector: np.ndarray
    relation_id: int
    domain: str


@dataclass
class Dataset:
    """Immutable table of embedded samples with a relation vocabulary.

    ``vectors`` is count x dim float32 (read-only), ``labels`` holds one
    relation index per row. ``labeled`` marks whether downstream consumers
    may read the labels for training; target-domain labels are carried for
    evaluation only.
    """

    vectors: np.ndarray
    labels: np.ndarray
    relation_names: list[str]
    domain: str
    labeled: bool = True
    _by_relation: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.vectors.flags.writeable = False
        self.labels.flags.writeable = False
        _check_table(self.vectors, self.labels, self.relation_names, self.domain)
        for r in range(len(self.relation_names)):
            idx = np.nonzero(self.labels == r)[0]
            self._by_relation[r] = idx

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_in(self) -> int:
        return self.vectors.shape[1]

    def sample(self, i: int) -> EmbeddedSample:
        return EmbeddedSample(
            sample_id=int(i),
            base_vector=self.vectors[i],
            relation_id=int(self.labels[i]),
            domain=self.domain,
        )

    def relation_indices(self, relation_id: int) -> np.ndarray:
        return self._by_relation[int(relation_id)]

    def relation_counts(self) -> np.ndarray:
        return np.array([len(self._by_relation[r]) for r in range(len(self.relation_names))])


def _check_table(vectors, labels, relation_names, domain):
    if domain not in DOMAINS:
        raise DataFormatError(f"unknown domain {domain!r}, expected one of {DOMAINS}")
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise DataFormatError("vectors must be a non-empty 2-d array")
    if labels.shape != (vectors.shape[0],):
        raise DataFormatError("labels length does not match sample count")
    if not relation_names:
        raise DataFormatError("relation vocabulary is empty")
    if not np.all(np.isfinite(vectors)):
        raise DataFormatError("embeddings contain non-finite values")
    if labels.min() < 0 or labels.max() >= len(relation_names):
        raise DataFormatError(
            f"unknown relation index {int(labels.max())} for vocabulary of "
            f"size {len(relation_names)}"
        )
    present = np.bincount(labels, minlength=len(relation_names))
    empty = np.nonzero(present == 0)[0]
    if len(empty):
        raise DataFormatError(f"relations without samples: {empty.tolist()}")


def load_dataset(directory_path: str) -> Dataset:
    """Load a dataset directory, validating every format invariant.

    Raises DataFormatError on a missing file, byte-count mismatch,
    non-finite values, or an out-of-range relation index.
    """
    meta_path = os.path.join(directory_path, META_NAME)
    emb_path = os.path.join(directory_path, EMBEDDINGS_NAME)
    lab_path = os.path.join(directory_path, LABELS_NAME)
    for p in (meta_path, emb_path, lab_path):
        if not os.path.isfile(p):
            raise DataFormatError(f"missing file: {p}")

    with open(meta_path, encoding="utf-8") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid meta.json: {exc}") from exc
    for key in ("count", "dim", "domain", "relations", "labeled"):
        if key not in meta:
            raise DataFormatError(f"meta.json missing field {key!r}")
    count, dim = int(meta["count"]), int(meta["dim"])
    if count < 1 or dim < 1:
        raise DataFormatError("count and dim must be positive")

    emb_bytes = os.path.getsize(emb_path)
    if emb_bytes != count * dim * 4:
        raise DataFormatError(
            f"byte-count mismatch: embeddings.f32 has {emb_bytes} bytes, "
            f"expected {count * dim * 4} for {count}x{dim} f32"
        )
    lab_bytes = os.path.getsize(lab_path)
    if lab_bytes != count * 4:
        raise DataFormatError(
            f"byte-count mismatch: labels.u32 has {lab_bytes} bytes, "
            f"expected {count * 4}"
        )

    vectors = np.fromfile(emb_path, dtype="<f4").reshape(count, dim)
    labels = np.fromfile(lab_path, dtype="<u4").astype(np.int64)
    return Dataset(
        vectors=vectors,
        labels=labels,
        relation_names=[str(r) for r in meta["relations"]],
        domain=str(meta["domain"]),
        labeled=bool(meta["labeled"]),
    )


def write_dataset(dataset: Dataset, directory_path: str) -> None:
    """Write a dataset directory in canonical form.

    Serialization is canonical (sorted JSON keys, fixed layout) so that
    write(load(p)) reproduces p byte for byte.
    """
    os.makedirs(directory_path, exist_ok=True)
    meta = {
        "count": dataset.count,
        "dim": dataset.d_in,
        "domain": dataset.domain,
        "relations": list(dataset.relation_names),
        "labeled": dataset.labeled,
    }
    with open(os.path.join(directory_path, META_NAME), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")
    dataset.vectors.astype("<f4").tofile(os.path.join(directory_path, EMBEDDINGS_NAME))
    dataset.labels.astype("<u4").tofile(os.path.join(directory_path, LABELS_NAME))


def validate_dataset_dir(directory_path: str) -> list[str]:
    """Return a list of format problems for a dataset directory (empty if valid)."""
    try:
        load_dataset(directory_path)
    except DataFormatError as exc:
        return [str(exc)]
    return []


@dataclass(frozen=True)
class EpisodeSpec:
    """An N-way-K-shot task shape with Q queries per relation."""

    n_way: int
    k_shot: int
    q_query: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.q_query < 0:
            raise ValueError("q_query must be >= 0")


@dataclass
class Episode:
    """One sampled task: a labeled support set plus a query set.

    Support rows are ordered relation-major (K consecutive rows per relation
    in ``relations`` order); likewise for queries. Labels are relation ids
    into the parent dataset's vocabulary.
    """

    support_x: np.ndarray
    support_labels: np.ndarray
    support_ids: np.ndarray
    query_x: np.ndarray
    query_labels: np.ndarray
    query_ids: np.ndarray
    relations: np.ndarray


def eligible_relations(dataset: Dataset, spec: EpisodeSpec) -> np.ndarray:
    """Relation ids with at least k_shot + q_query samples."""
    need = spec.k_shot + spec.q_query
    counts = dataset.relation_counts()
    keep = np.nonzero(counts >= need)[0]
    skipped = np.nonzero(counts < need)[0]
    if len(skipped):
        logger.warning(
            "skipping %d relations with fewer than %d samples: %s",
            len(skipped), need, skipped.tolist(),
        )
    return keep


def sample_episode(dataset: Dataset, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Draw an N-way-K-shot episode without replacement.

    Relations are drawn uniformly without replacement among eligible ones;
    within a relation, K + Q distinct samples are drawn, the first K as
    support and the rest as query. Support and query are disjoint by
    construction.
    """
    eligible = eligible_relations(dataset, spec)
    if len(eligible) < spec.n_way:
        raise ValueError(
            f"need {spec.n_way} relations with >= {spec.k_shot + spec.q_query} "
            f"samples, found {len(eligible)}"
        )
    chosen = rng.choice(eligible, size=spec.n_way, replace=False)

    support_idx, query_idx = [], []
    support_lab, query_lab = [], []
    for r in chosen:
        pool = dataset.relation_indices(int(r))
        picked = rng.choice(pool, size=spec.k_shot + spec.q_query, replace=False)
        support_idx.extend(picked[: spec.k_shot])
        support_lab.extend([int(r)] * spec.k_shot)
        query_idx.extend(picked[spec.k_shot:])
        query_lab.extend([int(r)] * spec.q_query)

    support_idx = np.array(support_idx, dtype=np.int64)
    query_idx = np.array(query_idx, dtype=np.int64)
    return Episode(
        support_x=dataset.vectors[support_idx],
        support_labels=np.array(support_lab, dtype=np.int64),
        support_ids=support_idx,
        query_x=dataset.vectors[query_idx] if len(query_idx) else np.zeros((0, dataset.d_in), dtype=np.float32),
        query_labels=np.array(query_lab, dtype=np.int64),
        query_ids=query_idx,
        relations=np.asarray(chosen, dtype=np.int64),
    )


def sample_target_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator):
    """Draw a minibatch of unlabeled target vectors, without replacement.

    Returns (vectors, sample_ids). Labels are deliberately not exposed:
    target batches feed the domain-alignment loss, which must never see
    them.
    """
    if dataset.domain != "target":
        raise ValueError("target batches can only be drawn from a target-domain dataset")
    if batch_size > dataset.count:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {dataset.count}")
    idx = rng.choice(dataset.count, size=batch_size, replace=False)
    return dataset.vectors[idx], idx
