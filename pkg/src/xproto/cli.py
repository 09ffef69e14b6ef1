"""Command-line interface.

All subcommands print machine-readable CSV or JSON to stdout and log to
stderr. Exit codes: 0 success, 2 data-format/validation failure, 1 any
other error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .data import (DataFormatError, EpisodeSpec, load_dataset, sample_episode,
                   validate_dataset_dir, write_dataset)
from .encoder import encode, init_head, load_checkpoint, save_checkpoint
from .graph import GraphFormatError, load_graph, write_graph
from .losses import representation_loss
from .pipeline import TrainConfig, evaluate, run_ablation, train
from .sinkhorn import SinkhornConfig, cost_matrix, sinkhorn
from .synth import generate_synthetic

logger = logging.getLogger("xproto.cli")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def parse_config_file(path: str) -> dict:
    """Parse a flat key = value config file.

    Lines are ``key = value`` with ``#`` comments; values may be ints,
    floats, true/false, none, or bare strings.
    """
    out: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = _parse_value(value)
    return out


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "adaptive"):
        return None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _load_train_config(path: str | None, overrides: dict) -> TrainConfig:
    raw = parse_config_file(path) if path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**raw)


def _print_csv(columns: list[str], rows: list[dict]) -> None:
    print(",".join(columns))
    for row in rows:
        print(",".join(_fmt(row[c]) for c in columns))


def cmd_validate_data(args) -> int:
    problems = validate_dataset_dir(args.directory)
    if problems:
        for p in problems:
            print(json.dumps({"ok": False, "problem": p}))
        return 2
    print(json.dumps({"ok": True, "directory": args.directory}))
    return 0


def cmd_synth(args) -> int:
    data = generate_synthetic(
        classes=args.classes, per_class=args.per_class, dim=args.dim,
        target_classes=args.target_classes, target_per_class=args.target_per_class,
        shift=args.shift, noise=args.noise, seed=args.seed,
    )
    write_dataset(data.source, os.path.join(args.out, "source"))
    write_dataset(data.target, os.path.join(args.out, "target"))
    write_graph(os.path.join(args.out, "graph"), data.graph.relation_names,
                data.graph.transe_vectors, data.graph.k)
    print(json.dumps({
        "out": args.out,
        "source": {"count": data.source.count, "relations": len(data.source.relation_names)},
        "target": {"count": data.target.count, "relations": len(data.target.relation_names)},
        "shift_norm": float(np.linalg.norm(data.shift_vector)),
        "graph_k": data.graph.k,
    }))
    return 0


def cmd_build_graph(args) -> int:
    graph = load_graph(args.directory, k=args.k)
    print("src,dst,weight")
    for i, j, w in graph.edges:
        print(f"{i},{j},{_fmt(w)}")
    return 0


def cmd_train(args) -> int:
    config = _load_train_config(args.config, {"seed": args.seed})
    source = load_dataset(args.source)
    target = load_dataset(args.target) if args.target else None
    graph = load_graph(args.graph)
    val = load_dataset(args.val) if args.val else None
    result = train(source, target, graph, config, val_dataset=val)
    save_checkpoint(args.out, result.head, result.optimizer_state)
    _print_csv(result.log_columns, result.log)
    logger.info("checkpoint written to %s", args.out)
    return 0


def cmd_eval(args) -> int:
    head, _ = load_checkpoint(args.ckpt)
    target = load_dataset(args.target)
    spec = EpisodeSpec(args.n, args.k, args.q)
    report = evaluate(head, target, spec, args.episodes, args.seed)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_ablate(args) -> int:
    config = _load_train_config(args.config, {})
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    graph = load_graph(args.graph)
    specs = []
    for token in args.specs.split(","):
        n, k = token.lower().split("x")
        specs.append(EpisodeSpec(int(n), int(k), args.q))
    seeds = [int(s) for s in args.seeds.split(",")]
    report = run_ablation(source, target, graph, config, specs, seeds,
                          eval_episodes=args.episodes)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_sinkhorn_bench(args) -> int:
    a = load_dataset(args.a)
    b = load_dataset(args.b)
    m = cost_matrix(a.vectors, b.vectors)
    config = SinkhornConfig(regularization=args.reg,
                            max_iterations=args.max_iter,
                            marginal_tolerance=args.tol)
    wa = np.full(a.count, 1.0 / a.count)
    wb = np.full(b.count, 1.0 / b.count)
    wd, plan = sinkhorn(m, wa, wb, config)
    print("wd,iterations,marginal_error,converged")
    print(f"{_fmt(wd)},{plan.iterations},{_fmt(plan.marginal_error)},{plan.converged}")
    return 0


def cmd_loss_probe(args) -> int:
    source = load_dataset(args.source)
    graph = load_graph(args.graph)
    config = TrainConfig(n_way=args.n, k_shot=args.k, q_query=args.q,
                         d_out=args.d_out, seed=args.seed)
    ss = np.random.SeedSequence(config.seed)
    rng_head, rng_proj, rng_episode = [np.random.default_rng(s) for s in ss.spawn(3)]
    if args.ckpt:
        head, _ = load_checkpoint(args.ckpt)
    else:
        head = init_head(source.d_in, config.d_out, config.activation, rng_head)
    projection = init_head(graph.transe_vectors.shape[1], head.d_out,
                           "identity", rng_proj)
    features = pipeline._graph_feature_rows(graph, source, projection)
    from .graph import init_prototypes
    protos = init_prototypes(source, features, head, prior_std=config.sigma)
    episode = sample_episode(source, EpisodeSpec(args.n, args.k, args.q), rng_episode)
    rep = representation_loss(episode, protos, head, rho=config.rho)
    from .sinkhorn import adversarial_loss
    emb_s = encode(head, episode.support_x)
    emb_q = encode(head, episode.query_x)
    adv = adversarial_loss(emb_s, emb_q, config.sinkhorn_config())
    print("loss_total,loss_cls,loss_s2s,loss_s2v,loss_adv")
    print(",".join(_fmt(v) for v in
                   (rep.value, rep.cls_value, rep.s2s_value, rep.s2v_value, adv.value)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xproto",
        description="Cross-domain few-shot relation classification over "
                    "precomputed embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-data", help="check a dataset directory")
    p.add_argument("directory")
    p.set_defaults(fn=cmd_validate_data)

    p = sub.add_parser("synth", help="generate synthetic source/target/graph dirs")
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--target-classes", type=int, default=10)
    p.add_argument("--target-per-class", type=int, default=50)
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build-graph", help="materialize k-NN edges for a graph dir")
    p.add_argument("directory")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train", help="train an encoder head")
    p.add_argument("--source", required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--graph", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="episodic target-domain evaluation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate all four loss variants")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--specs", default="5x1")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sinkhorn-bench", help="entropic OT between two embedding dirs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--reg", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(fn=cmd_sinkhorn_bench)

    p = sub.add_parser("loss-probe", help="print loss components for a seeded episode")
    p.add_argument("--source", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--d-out", type=int, default=64)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(fn=cmd_loss_probe)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataFormatError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
