"""Relation-graph directory writer.

Takes precomputed knowledge-graph relation vectors (TransE output) plus
names and writes the engine's graph directory (graph.json + transe.f32).
Edges are not stored; the engine materializes the k-NN graph itself.
A random-unit-vector mode exists for pipeline smoke tests.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .extract import _atomic_write


class GraphInputError(Exception):
    pass


def read_names(names_file: str) -> list[str]:
    with open(names_file, encoding="utf-8") as f:
        names = [line.strip() for line in f if line.strip()]
    if not names:
        raise GraphInputError(f"{names_file}: no relation names")
    return names


def read_vectors(vectors_file: str, n_relations: int,
                 dim: int | None = None) -> np.ndarray:
    """Flat f32 matrix; the row width is inferred unless ``dim`` pins it."""
    size = os.path.getsize(vectors_file)
    if dim is not None:
        if size != 4 * n_relations * dim:
            raise GraphInputError(
                f"{vectors_file}: row/name count mismatch: {size} bytes is not "
                f"{n_relations} x {dim} f32")
    elif size % (4 * n_relations) != 0:
        raise GraphInputError(
            f"{vectors_file}: row/name count mismatch: {size} bytes is not a "
            f"whole f32 matrix for {n_relations} relations")
    else:
        dim = size // (4 * n_relations)
    if dim < 1:
        raise GraphInputError(f"{vectors_file}: empty vectors")
    vectors = np.fromfile(vectors_file, dtype="<f4").reshape(n_relations, dim)
    if not np.all(np.isfinite(vectors)):
        raise GraphInputError(f"{vectors_file}: non-finite values")
    return vectors


def random_transe(n_relations: int, dim: int, seed: int = 0) -> np.ndarray:
    """Random unit vectors standing in for trained relation embeddings."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_relations, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype("<f4")


def write_graph_dir(output_dir: str, relation_names: list[str],
                    vectors: np.ndarray, k: int) -> None:
    if vectors.shape[0] != len(relation_names):
        raise GraphInputError(
            f"{vectors.shape[0]} vector rows for {len(relation_names)} names")
    if not 1 <= k < len(relation_names):
        raise GraphInputError(f"k={k} invalid for {len(relation_names)} relations")
    os.makedirs(output_dir, exist_ok=True)
    meta = {"relations": list(relation_names), "dim": int(vectors.shape[1]),
            "k": int(k)}
    _atomic_write(os.path.join(output_dir, "graph.json"),
                  (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode("utf-8"))
    _atomic_write(os.path.join(output_dir, "transe.f32"),
                  np.ascontiguousarray(vectors, dtype="<f4").tobytes())


def make_relation_graph(vectors_file: str, names_file: str, k: int,
                        output_dir: str, dim: int | None = None) -> dict:
    names = read_names(names_file)
    vectors = read_vectors(vectors_file, len(names), dim)
    write_graph_dir(output_dir, names, vectors, k)
    return {"relations": len(names), "dim": int(vectors.shape[1]), "k": k,
            "out": output_dir}
