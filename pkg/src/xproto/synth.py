"""Synthetic cross-domain data: Gaussian class blobs with disjoint label
spaces and a controllable domain shift, plus a matching relation graph.

Source classes sit around random unit-norm centers; target classes get
fresh centers (disjoint relation vocabulary) and every target point is
translated by the domain-shift vector. The emitted relation graph uses
the source class centers as its knowledge-graph vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .graph import RelationGraph, build_knn_graph


@dataclass
class SyntheticData:
    source: Dataset
    target: Dataset
    graph: RelationGraph
    shift_vector: np.ndarray


def _unit_centers(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    c = rng.standard_normal((n, dim))
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def generate_synthetic(classes: int = 12, per_class: int = 100, dim: int = 32,
                       target_classes: int = 10, target_per_class: int = 50,
                       shift=2.0, noise: float = 0.08, seed: int = 0,
                       graph_k: int | None = None) -> SyntheticData:
    """Build paired source/target datasets and a source relation graph.

    ``shift`` is either an explicit vector or a norm; a norm is turned
    into a random direction of that length. ``noise`` is the per-coordinate
    standard deviation of each class blob.
    """
    if classes < 2 or target_classes < 2:
        raise ValueError("need at least 2 classes per domain")
    if dim < 2:
        raise ValueError("degenerate dim")
    rng = np.random.default_rng(seed)

    src_centers = _unit_centers(classes, dim, rng)
    src_x = np.repeat(src_centers, per_class, axis=0)
    src_x = src_x + noise * rng.standard_normal(src_x.shape)
    src_y = np.repeat(np.arange(classes), per_class)

    tgt_centers = _unit_centers(target_classes, dim, rng)
    if np.isscalar(shift):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        shift_vec = float(shift) * direction
    else:
        shift_vec = np.asarray(shift, dtype=np.float64)
        if shift_vec.shape != (dim,):
            raise ValueError("shift vector dimension mismatch")
    tgt_x = np.repeat(tgt_centers, target_per_class, axis=0)
    tgt_x = tgt_x + noise * rng.standard_normal(tgt_x.shape) + shift_vec

    source = Dataset(
        vectors=src_x.astype(np.float32),
        labels=src_y,
        relation_names=[f"src_rel_{i:02d}" for i in range(classes)],
        domain="source",
        labeled=True,
    )
    target = Dataset(
        vectors=tgt_x.astype(np.float32),
        labels=np.repeat(np.arange(target_classes), target_per_class),
        relation_names=[f"tgt_rel_{i:02d}" for i in range(target_classes)],
        domain="target",
        labeled=False,
    )
    k = graph_k if graph_k is not None else min(10, classes - 1)
    graph = build_knn_graph(src_centers, k, source.relation_names)
    return SyntheticData(source=source, target=target, graph=graph,
                         shift_vector=shift_vec)
