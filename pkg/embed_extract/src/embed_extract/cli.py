"""embed-extract command line.

    embed-extract --in data.jsonl --model <name-or-path> \
                  --pooling entity-marker --out <dir>
    embed-extract graph --vectors transe.f32 --names names.txt --k 10 --out <dir>
    embed-extract graph --random-transe 828 --dim 16 --k 10 --out <dir>
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .extract import ExtractionError, extract
from .graph import (GraphInputError, make_relation_graph, random_transe,
                    write_graph_dir)
from .records import RecordError


def build_extract_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embed-extract",
                                description="Embed annotated sentences with a "
                                            "pretrained transformer checkpoint.")
    p.add_argument("--in", dest="input", required=True, help="input JSONL")
    p.add_argument("--model", required=True, help="local checkpoint name or path")
    p.add_argument("--pooling", default="entity-marker",
                   choices=["cls", "cls-token", "entity-marker",
                            "entity-marker-concat"])
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-length", type=int, default=128)
    p.add_argument("--unlabeled", action="store_true",
                   help="mark the output as unlabeled (evaluation-only labels)")
    return p


def build_graph_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embed-extract graph",
                                description="Write a relation-graph directory "
                                            "from precomputed vectors.")
    p.add_argument("--vectors", help="f32 matrix of relation vectors")
    p.add_argument("--names", help="one relation name per line")
    p.add_argument("--random-transe", type=int, metavar="N",
                   help="emit N random unit vectors instead (smoke tests)")
    p.add_argument("--dim", type=int, default=None,
                   help="vector dimension (required meaning for "
                        "--random-transe, optional validation otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "graph":
            args = build_graph_parser().parse_args(argv[1:])
            if args.random_transe is not None:
                dim = args.dim if args.dim is not None else 16
                names = [f"rel_{i:04d}" for i in range(args.random_transe)]
                vectors = random_transe(args.random_transe, dim, args.seed)
                write_graph_dir(args.out, names, vectors, args.k)
                summary = {"relations": len(names), "dim": dim,
                           "k": args.k, "out": args.out, "random": True}
            else:
                if not (args.vectors and args.names):
                    raise GraphInputError(
                        "need --vectors and --names (or --random-transe N)")
                summary = make_relation_graph(args.vectors, args.names,
                                              args.k, args.out, dim=args.dim)
        else:
            args = build_extract_parser().parse_args(argv)
            summary = extract(args.input, args.model, args.pooling, args.out,
                              batch_size=args.batch_size,
                              max_length=args.max_length,
                              labeled=not args.unlabeled)
        print(json.dumps(summary))
        return 0
    except (RecordError, GraphInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
