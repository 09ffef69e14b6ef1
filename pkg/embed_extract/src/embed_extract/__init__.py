"""Offline embedding extraction into the engine's dataset format."""

from .extract import embed_records, extract, write_dataset_dir
from .graph import make_relation_graph, random_transe, write_graph_dir
from .records import RawSentence, read_jsonl

__version__ = "0.1.0"
