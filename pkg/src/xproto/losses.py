"""Representation losses and their analytic embedding gradients.

Three components feed the encoder update:

  * a cross-entropy classification loss over dot-product softmax against
    the episode prototypes,
  * a sentence-to-sentence contrastive term over support pairs,
  * a sentence-to-prototype contrastive term,

combined as  L = L_cls + rho * (L_s2s + L_s2v).

Every loss returns its value together with the gradient with respect to
the input embeddings; prototypes are treated as constants here (they are
refined separately by the Langevin update). All math runs in float64.

The pair kernel is  d(x, y) = 1 / (1 + exp(cos(x, y))),  a decreasing
function of the cosine with range (1/(1+e), 1/(1+e^-1)); it is symmetric
and invariant to positive rescaling of either argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderHead, encode
from .graph import PrototypeSet


@dataclass
class LossValue:
    """A scalar loss plus d(loss)/d(embedding) for each input row."""

    value: float
    d_embeddings: np.ndarray


@dataclass
class RepresentationLoss:
    """Combined loss with per-component values and split gradients."""

    value: float
    cls_value: float
    s2s_value: float | None
    s2v_value: float | None
    d_support: np.ndarray
    d_query: np.ndarray


def _unit_rows(x: np.ndarray, what: str):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"undefined cosine: zero-norm {what}")
    return x / norms[:, None], norms


def pair_distance(x: np.ndarray, y: np.ndarray) -> float:
    """d(x, y) = 1 / (1 + exp(cos(x, y))). Raises on a zero-norm input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("undefined cosine: zero-norm vector")
    u = float(np.dot(x / nx, y / ny))
    return 1.0 / (1.0 + np.exp(u))


def loss_cls(embeddings: np.ndarray, labels: np.ndarray, protos: PrototypeSet,
             relations: np.ndarray | None = None) -> LossValue:
    """Mean cross-entropy of dot-product softmax against the episode prototypes.

    Softmax runs over R' (``relations``; defaults to the distinct labels).
    Gradient per sample is (p - onehot) V / n.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise ValueError("loss_cls needs at least one sample")
    rel = np.unique(labels) if relations is None else np.asarray(relations)
    rows = protos.rows(rel)
    local = {int(r): i for i, r in enumerate(rel)}
    lab = np.array([local[int(l)] for l in labels])

    v = protos.v[rows]
    logits = x @ v.T
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    logp = z - np.log(e.sum(axis=1, keepdims=True))
    n = x.shape[0]
    value = -float(logp[np.arange(n), lab].mean())

    resid = p.copy()
    resid[np.arange(n), lab] -= 1.0
    grad = (resid @ v) / n
    return LossValue(value=value, d_embeddings=grad)


def loss_s2s(support_embeddings: np.ndarray, labels: np.ndarray,
             n_way: int | None = None) -> LossValue:
    """Sentence-to-sentence contrastive loss over all ordered support pairs.

    L = (1/N^2) sum_{i,j} exp(delta(i,j))
                 / sum_{j'} exp((1 - delta(i,j')) d(x_i, x_j'))

    with delta = 1 for same-class pairs (including i = j) and 0 otherwise.
    The numerators depend only on the labels; embeddings enter through the
    cross-class kernel values in the denominators, so increasing any
    cross-class d strictly decreases L.
    """
    x = np.asarray(support_embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[0] < 2:
        raise ValueError("loss_s2s needs at least two support samples")
    n = x.shape[0]
    n_classes = n_way if n_way is not None else len(np.unique(labels))

    xhat, norms = _unit_rows(x, "support embedding")
    u = xhat @ xhat.T
    d = 1.0 / (1.0 + np.exp(u))
    same = labels[:, None] == labels[None, :]

    numer = np.where(same, np.e, 1.0).sum(axis=1)
    den_terms = np.where(same, 1.0, np.exp(d))
    den = den_terms.sum(axis=1)
    scale = 1.0 / (n_classes * n_classes)
    value = scale * float((numer / den).sum())

    # dL/dd_ij' = -scale * numer_i / den_i^2 * exp(d_ij') on cross pairs,
    # then through dd/du = -d(1-d) and the two cosine derivatives.
    coef = (scale * numer / (den * den))[:, None] * np.exp(d) * d * (1.0 - d)
    c = np.where(same, 0.0, coef)
    row = (c * u).sum(axis=1)
    col = (c * u).sum(axis=0)
    grad = ((c @ xhat) - row[:, None] * xhat) / norms[:, None]
    grad += ((c.T @ xhat) - col[:, None] * xhat) / norms[:, None]
    return LossValue(value=value, d_embeddings=grad)


def loss_s2v(protos: PrototypeSet, support_embeddings: np.ndarray, labels: np.ndarray,
             relations: np.ndarray | None = None) -> LossValue:
    """Sentence-to-prototype contrastive loss.

    L = (1/N^2) sum_{r in R'} sum_i log dhat(v_r, x_i), where dhat equals
    d(v_r, x_i) when sample i carries relation r and 1 - d(v_r, x_i)
    otherwise. Minimizing it pulls samples toward their own prototype
    (in cosine) and pushes them from the others.
    """
    x = np.asarray(support_embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    rel = np.unique(labels) if relations is None else np.asarray(relations)
    rows = protos.rows(rel)

    v = protos.v[rows]
    vnorms = np.linalg.norm(v, axis=1)
    if np.any(vnorms == 0.0):
        raise ValueError("undefined cosine: zero-norm prototype")
    vhat = v / vnorms[:, None]
    xhat, xnorms = _unit_rows(x, "support embedding")

    u = xhat @ vhat.T
    d = 1.0 / (1.0 + np.exp(u))
    match = labels[:, None] == np.asarray(rel)[None, :]
    dhat = np.where(match, d, 1.0 - d)
    n_classes = len(rel)
    scale = 1.0 / (n_classes * n_classes)
    value = scale * float(np.log(dhat).sum())

    s = scale * np.where(match, -(1.0 - d), d)
    row = (s * u).sum(axis=1)
    grad = ((s @ vhat) - row[:, None] * xhat) / xnorms[:, None]
    return LossValue(value=value, d_embeddings=grad)


def representation_loss(episode, protos: PrototypeSet, head: EncoderHead,
                        rho: float = 0.6, cls_on: str = "query",
                        use_con: bool = True) -> RepresentationLoss:
    """L = L_cls + rho * (L_s2s + L_s2v) for one episode.

    The classification term runs on the query set by default (``cls_on``
    in {"query", "support", "both"}); the contrastive terms always run on
    the support set. If the chosen classification set is empty (Q = 0),
    the term contributes zero. Gradients are returned separately for the
    support and query embeddings.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if cls_on not in ("query", "support", "both"):
        raise ValueError("cls_on must be 'query', 'support' or 'both'")

    emb_s = encode(head, episode.support_x)
    n_q = episode.query_x.shape[0]
    emb_q = encode(head, episode.query_x) if n_q else np.zeros((0, head.d_out))
    d_support = np.zeros_like(emb_s)
    d_query = np.zeros_like(emb_q)

    if cls_on == "query":
        cls_x, cls_lab = emb_q, episode.query_labels
    elif cls_on == "support":
        cls_x, cls_lab = emb_s, episode.support_labels
    else:
        cls_x = np.concatenate([emb_s, emb_q], axis=0)
        cls_lab = np.concatenate([episode.support_labels, episode.query_labels])

    if cls_x.shape[0]:
        cls = loss_cls(cls_x, cls_lab, protos, episode.relations)
        cls_value = cls.value
        if cls_on == "query":
            d_query += cls.d_embeddings
        elif cls_on == "support":
            d_support += cls.d_embeddings
        else:
            d_support += cls.d_embeddings[: emb_s.shape[0]]
            d_query += cls.d_embeddings[emb_s.shape[0]:]
    else:
        cls_value = 0.0

    s2s_value = s2v_value = None
    if use_con:
        s2s = loss_s2s(emb_s, episode.support_labels)
        s2v = loss_s2v(protos, emb_s, episode.support_labels, episode.relations)
        s2s_value, s2v_value = s2s.value, s2v.value
        d_support += rho * (s2s.d_embeddings + s2v.d_embeddings)
        value = cls_value + rho * (s2s_value + s2v_value)
    else:
        value = cls_value

    return RepresentationLoss(
        value=value,
        cls_value=cls_value,
        s2s_value=s2s_value,
        s2v_value=s2v_value,
        d_support=d_support,
        d_query=d_query,
    )
