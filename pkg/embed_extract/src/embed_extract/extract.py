"""Transformer embedding extraction into the engine's dataset format.

Runs a locally available pretrained masked-language-model checkpoint over
annotated sentences, pools one vector per sentence, and writes the
three-file dataset directory (meta.json / embeddings.f32 / labels.u32)
that the engine's ``validate-data`` command accepts.

Poolings:

  * ``cls-token``            first-token hidden state
  * ``entity-marker-concat`` hidden states at the first token of each
    entity span, concatenated and projected back to hidden size by
    averaging the two halves (equivalently: the mean of the two entity
    vectors)

Inference runs in eval mode with no dropout, so a fixed (model, pooling,
input) triple is deterministic and repeated runs are byte-identical.
Files are written atomically via temp-file rename.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile

import numpy as np

from .records import RawSentence, RecordError, read_jsonl

logger = logging.getLogger("embed_extract")

POOLING_ALIASES = {
    "cls": "cls-token",
    "cls-token": "cls-token",
    "entity-marker": "entity-marker-concat",
    "entity-marker-concat": "entity-marker-concat",
}


class ExtractionError(Exception):
    """Model loading or span-to-token alignment failed."""


def _atomic_write(path: str, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _token_index_for(offsets, char_start: int, where: str) -> int:
    """First non-special token whose span covers the span start."""
    for idx, (s, e) in enumerate(offsets):
        if s == e:  # special tokens carry (0, 0)
            continue
        if s <= char_start < e:
            return idx
    raise ExtractionError(f"{where}: entity span starting at {char_start} has "
                          "no aligned token (truncated or out of vocabulary)")


def _load_model(model_name: str):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
    except Exception as exc:
        raise ExtractionError(f"cannot load model {model_name!r}: {exc}") from exc
    if not getattr(tokenizer, "is_fast", False):
        raise ExtractionError("a fast tokenizer (offset mapping support) is required")
    model.eval()
    torch.set_grad_enabled(False)
    return tokenizer, model


def embed_records(records: list[RawSentence], model_name: str, pooling: str,
                  batch_size: int = 16, max_length: int = 128) -> np.ndarray:
    """One pooled vector per record, in input order."""
    import torch

    if pooling not in POOLING_ALIASES:
        raise ValueError(f"unknown pooling {pooling!r}; choose from "
                         f"{sorted(set(POOLING_ALIASES.values()))}")
    pooling = POOLING_ALIASES[pooling]
    tokenizer, model = _load_model(model_name)

    out = []
    for start in range(0, len(records), batch_size):
        batch = records[start:start + batch_size]
        enc = tokenizer([r.text for r in batch], return_tensors="pt",
                        padding=True, truncation=True, max_length=max_length,
                        return_offsets_mapping=True)
        offsets = enc.pop("offset_mapping").tolist()
        hidden = model(**enc).last_hidden_state
        if pooling == "cls-token":
            pooled = hidden[:, 0, :]
        else:
            rows = []
            for i, rec in enumerate(batch):
                where = f"record {start + i}"
                h_idx = _token_index_for(offsets[i], rec.head_span[0], where)
                t_idx = _token_index_for(offsets[i], rec.tail_span[0], where)
                pair = torch.cat([hidden[i, h_idx], hidden[i, t_idx]])
                half = pair.shape[0] // 2
                rows.append((pair[:half] + pair[half:]) / 2.0)
            pooled = torch.stack(rows)
        out.append(pooled.numpy().astype("<f4"))
    return np.concatenate(out, axis=0)


def write_dataset_dir(output_dir: str, embeddings: np.ndarray, labels: np.ndarray,
                      relation_names: list[str], domain: str, labeled: bool) -> None:
    """Write meta.json / embeddings.f32 / labels.u32 per the engine format."""
    os.makedirs(output_dir, exist_ok=True)
    meta = {
        "count": int(embeddings.shape[0]),
        "dim": int(embeddings.shape[1]),
        "domain": domain,
        "relations": list(relation_names),
        "labeled": labeled,
    }
    meta_bytes = (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode("utf-8")
    _atomic_write(os.path.join(output_dir, "meta.json"), meta_bytes)
    _atomic_write(os.path.join(output_dir, "embeddings.f32"),
                  np.ascontiguousarray(embeddings, dtype="<f4").tobytes())
    _atomic_write(os.path.join(output_dir, "labels.u32"),
                  np.ascontiguousarray(labels, dtype="<u4").tobytes())


def extract(input_jsonl: str, model_name: str, pooling: str, output_dir: str,
            batch_size: int = 16, max_length: int = 128,
            labeled: bool = True) -> dict:
    """JSONL of annotated sentences -> dataset directory. Returns a summary."""
    records = read_jsonl(input_jsonl)
    domains = {r.domain for r in records}
    if len(domains) != 1:
        raise RecordError(f"records mix domains {sorted(domains)}; "
                          "split the input per domain")
    domain = domains.pop()
    if domain not in ("source", "target"):
        raise RecordError(f"domain must be 'source' or 'target', got {domain!r}")

    relation_names = sorted({r.relation for r in records})
    rel_index = {name: i for i, name in enumerate(relation_names)}
    labels = np.array([rel_index[r.relation] for r in records], dtype=np.uint32)

    vectors = embed_records(records, model_name, pooling, batch_size, max_length)
    write_dataset_dir(output_dir, vectors, labels, relation_names, domain, labeled)
    logger.info("wrote %d embeddings (dim %d, %d relations) to %s",
                vectors.shape[0], vectors.shape[1], len(relation_names), output_dir)
    return {"count": int(vectors.shape[0]), "dim": int(vectors.shape[1]),
            "relations": len(relation_names), "out": output_dir}
