import json
import shutil
import subprocess
import sys

import pytest

SUBJECTS = ["alice", "bob", "carol", "dmitri", "elena", "farid", "grace",
            "henrik", "iris", "jonas"]
OBJECTS = ["acme", "orbital", "paris", "lyon", "quartz", "helium", "novara",
           "tessin", "umbra", "verona"]
RELATION_VERBS = {
    "employer": "works at",
    "birthplace": "was born in",
    "residence": "lives near",
    "founder": "founded",
    "member": "belongs to",
}


def make_record(subject, relation, obj, filler):
    text = f"{subject} {RELATION_VERBS[relation]} {obj} {filler}"
    head = (0, len(subject))
    tail_start = len(subject) + 1 + len(RELATION_VERBS[relation]) + 1
    tail = (tail_start, tail_start + len(obj))
    assert text[head[0]:head[1]] == subject
    assert text[tail[0]:tail[1]] == obj
    return {"text": text, "head": list(head), "tail": list(tail),
            "relation": relation, "domain": "source"}


def corpus_words():
    words = set(SUBJECTS) | set(OBJECTS) | {"today", "again"}
    for verb in RELATION_VERBS.values():
        words.update(verb.split())
    return sorted(words)


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """A tiny deterministic masked-LM checkpoint built offline."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    path = tmp_path_factory.mktemp("tiny-mlm")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + corpus_words()
    (path / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(path / "vocab.txt"),
                                  do_lower_case=True)
    config = BertConfig(vocab_size=len(vocab), hidden_size=32,
                        num_hidden_layers=2, num_attention_heads=2,
                        intermediate_size=64, max_position_embeddings=64)
    torch.manual_seed(0)
    model = BertModel(config)
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def corpus_jsonl(tmp_path_factory):
    """50 annotated sentences over 5 relations (10 each)."""
    path = tmp_path_factory.mktemp("corpus") / "sentences.jsonl"
    records = []
    for r_idx, relation in enumerate(sorted(RELATION_VERBS)):
        for i in range(10):
            subject = SUBJECTS[(r_idx * 3 + i) % len(SUBJECTS)]
            obj = OBJECTS[(r_idx + 2 * i) % len(OBJECTS)]
            filler = "today" if i % 2 == 0 else "again"
            records.append(make_record(subject, relation, obj, filler))
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return str(path)


@pytest.fixture()
def tiny_jsonl(tmp_path):
    path = tmp_path / "three.jsonl"
    records = [
        make_record("alice", "employer", "acme", "today"),
        make_record("bob", "employer", "orbital", "again"),
        make_record("carol", "birthplace", "paris", "today"),
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return str(path)


def run_xproto(*args):
    """Invoke the primary engine's CLI (its external interface)."""
    exe = shutil.which("xproto")
    cmd = [exe] if exe else [sys.executable, "-m", "xproto.cli"]
    return subprocess.run([*cmd, *args], capture_output=True, text=True)
