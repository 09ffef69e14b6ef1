"""Training loop, target-domain adaptation, prediction, evaluation, and
the ablation harness.

One training epoch follows the episodic two-step scheme:

  1. sample an N-way-K-shot episode from the source domain,
  2. refine the episode prototypes with one (or more) Langevin steps,
  3. take an optimizer step on the representation loss,
  4. re-embed the support set plus a target minibatch and take a second
     optimizer step on the Wasserstein alignment loss.

Ablation switches drop the contrastive term (``use_con``) or the whole
alignment step (``use_wd``). A fixed seed makes the run fully
deterministic, including the emitted loss log.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Episode, EpisodeSpec, sample_episode, sample_target_batch
from .encoder import (EncoderHead, GradBuffer, OptimizerState, backward, encode,
                      init_head, init_optimizer, optimizer_step)
from .graph import (PrototypeSet, RelationGraph, graph_features, init_prototypes,
                    langevin_update, refresh_means, reinit_rows)
from .losses import representation_loss
from .sinkhorn import SinkhornConfig, adversarial_loss

logger = logging.getLogger("xproto.pipeline")

MAX_LANGEVIN_STEPS = 16


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on besides the data itself."""

    epochs: int = 300
    n_way: int = 5
    k_shot: int = 1
    q_query: int = 1
    rho: float = 0.6
    epsilon: float = 0.1
    langevin_steps: int = 1
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 4
    sinkhorn_reg: float | None = None
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-9
    sigma: float = 1.0
    seed: int = 0
    use_con: bool = True
    use_wd: bool = True
    d_out: int = 64
    activation: str = "identity"
    cls_on: str = "query"
    proto_reinit: bool = False
    mean_subsample: int | None = None
    eval_every: int = 500

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 1 <= self.langevin_steps <= MAX_LANGEVIN_STEPS:
            raise ValueError(f"langevin_steps must be in 1..{MAX_LANGEVIN_STEPS}")
        for name in ("rho",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("epsilon", "learning_rate", "sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def loss_columns(self) -> list[str]:
        cols = ["epoch", "loss_cls"]
        if self.use_con:
            cols += ["loss_s2s", "loss_s2v"]
        if self.use_wd:
            cols += ["loss_adv"]
        return cols

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(
            regularization=self.sinkhorn_reg,
            max_iterations=self.sinkhorn_max_iter,
            marginal_tolerance=self.sinkhorn_tol,
        )


@dataclass
class TrainResult:
    head: EncoderHead
    optimizer_state: OptimizerState
    log: list[dict]
    log_columns: list[str]
    prototypes: PrototypeSet
    val_history: list[dict] = field(default_factory=list)


def _graph_feature_rows(graph: RelationGraph, dataset: Dataset,
                        projection: EncoderHead) -> np.ndarray:
    """Graph features aligned to the dataset's relation-id order."""
    index = {name: i for i, name in enumerate(graph.relation_names)}
    missing = [n for n in dataset.relation_names if n not in index]
    if missing:
        raise ValueError(f"graph does not cover source relations: {missing}")
    rows = np.array([index[n] for n in dataset.relation_names])
    return graph_features(graph, projection)[rows]


def train(source: Dataset, target: Dataset | None, graph: RelationGraph,
          config: TrainConfig, val_dataset: Dataset | None = None,
          val_spec: EpisodeSpec | None = None, val_episodes: int = 100) -> TrainResult:
    """Run the full episodic training loop.

    ``target`` may be None only when the alignment loss is disabled. When a
    validation dataset is given, the run evaluates every ``eval_every``
    epochs and returns the best head seen instead of the final one.
    """
    if config.use_wd and target is None:
        raise ValueError("alignment loss enabled but no target dataset given")

    ss = np.random.SeedSequence(config.seed)
    (rng_head, rng_proj, rng_episode, rng_target,
     rng_langevin, rng_means, rng_val) = [np.random.default_rng(s) for s in ss.spawn(7)]

    head = init_head(source.d_in, config.d_out, config.activation, rng_head)
    opt = init_optimizer(head, config.optimizer, config.learning_rate)
    projection = init_head(graph.transe_vectors.shape[1], config.d_out,
                           "identity", rng_proj)
    features = _graph_feature_rows(graph, source, projection)
    protos = init_prototypes(source, features, head, prior_std=config.sigma,
                             subsample=config.mean_subsample, rng=rng_means)

    spec = EpisodeSpec(config.n_way, config.k_shot, config.q_query)
    sk_config = config.sinkhorn_config()
    grads = GradBuffer.zeros_like(head)
    log: list[dict] = []
    val_history: list[dict] = []
    best: tuple[float, EncoderHead] | None = None

    for epoch in range(1, config.epochs + 1):
        try:
            episode = sample_episode(source, spec, rng_episode)
            if config.proto_reinit:
                refresh_means(protos, source, head,
                              subsample=config.mean_subsample, rng=rng_means)
                reinit_rows(protos, episode.relations)

            support_emb = encode(head, episode.support_x)
            langevin_update(protos, support_emb, episode.support_labels,
                            config.epsilon, config.langevin_steps, rng_langevin)

            rep = representation_loss(episode, protos, head, rho=config.rho,
                                      cls_on=config.cls_on, use_con=config.use_con)
            grads.zero()
            backward(head, episode.support_x, rep.d_support, grads)
            if episode.query_x.shape[0]:
                backward(head, episode.query_x, rep.d_query, grads)
            optimizer_step(opt, head, grads)

            row = {"epoch": epoch, "loss_cls": rep.cls_value}
            if config.use_con:
                row["loss_s2s"] = rep.s2s_value
                row["loss_s2v"] = rep.s2v_value
            if config.use_wd:
                source_emb = encode(head, episode.support_x)
                batch_x, _ = sample_target_batch(target, config.batch_size, rng_target)
                target_emb = encode(head, batch_x)
                adv = adversarial_loss(source_emb, target_emb, sk_config)
                grads.zero()
                backward(head, episode.support_x, adv.d_source, grads)
                backward(head, batch_x, adv.d_target, grads)
                optimizer_step(opt, head, grads)
                row["loss_adv"] = adv.value
            log.append(row)
        except Exception as exc:
            raise RuntimeError(f"training aborted at epoch {epoch}: {exc}") from exc

        if val_dataset is not None and (epoch % config.eval_every == 0
                                        or epoch == config.epochs):
            vs = val_spec or EpisodeSpec(config.n_way, config.k_shot,
                                         max(1, config.q_query))
            report = _evaluate_with_rng(head, val_dataset, vs, val_episodes, rng_val)
            val_history.append({"epoch": epoch, "accuracy": report.accuracy})
            logger.info("epoch %d validation accuracy %.4f", epoch, report.accuracy)
            if best is None or report.accuracy > best[0]:
                best = (report.accuracy, head.copy())

    final_head = best[1] if best is not None else head
    return TrainResult(head=final_head, optimizer_state=opt, log=log,
                       log_columns=config.loss_columns(), prototypes=protos,
                       val_history=val_history)


@dataclass
class TargetPrototypes:
    """Per-relation prototypes for one target support set, sorted by id."""

    relations: np.ndarray
    v: np.ndarray


def adapt(head: EncoderHead, target_support: Episode) -> TargetPrototypes:
    """Form target prototypes as per-relation means of support embeddings.

    The encoder is a fixed feature extractor here; no training happens.
    """
    emb = encode(head, target_support.support_x)
    labels = target_support.support_labels
    relations = np.sort(np.unique(target_support.relations))
    v = np.empty((len(relations), emb.shape[1]))
    for i, r in enumerate(relations):
        mask = labels == r
        if not mask.any():
            raise ValueError(f"relation {int(r)} has no support samples")
        v[i] = emb[mask].mean(axis=0)
    return TargetPrototypes(relations=relations, v=v)


def predict(query_embedding: np.ndarray, prototypes: TargetPrototypes) -> int:
    """Relation with the largest dot-product score; ties go to the lowest id."""
    scores = prototypes.v @ np.asarray(query_embedding, dtype=np.float64)
    return int(prototypes.relations[int(np.argmax(scores))])


def _predict_rows(query_emb: np.ndarray, prototypes: TargetPrototypes) -> np.ndarray:
    scores = query_emb @ prototypes.v.T
    return prototypes.relations[np.argmax(scores, axis=1)]


@dataclass
class EvalReport:
    """Mean episode accuracy with a normal-approximation 95% interval."""

    accuracy: float
    ci95: float
    episodes: int
    spec: dict

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "ci95": self.ci95,
                "episodes": self.episodes, **self.spec}


def _evaluate_with_rng(head, dataset, spec, episode_count, rng) -> EvalReport:
    if spec.q_query < 1:
        raise ValueError("evaluation needs q_query >= 1")
    accs = np.empty(episode_count)
    for e in range(episode_count):
        ep = sample_episode(dataset, spec, rng)
        protos = adapt(head, ep)
        pred = _predict_rows(encode(head, ep.query_x), protos)
        accs[e] = float(np.mean(pred == ep.query_labels))
    mean = float(accs.mean())
    sd = float(accs.std(ddof=1)) if episode_count > 1 else 0.0
    ci = 1.96 * sd / np.sqrt(episode_count)
    return EvalReport(accuracy=mean, ci95=float(ci), episodes=episode_count,
                      spec={"n_way": spec.n_way, "k_shot": spec.k_shot,
                            "q_query": spec.q_query})


def evaluate(head: EncoderHead, target_dataset: Dataset, spec: EpisodeSpec,
             episode_count: int, seed: int) -> EvalReport:
    """Episodic N-way-K-shot accuracy on the target domain.

    Every episode samples a fresh support/query split, adapts prototypes
    from the support set, and scores the queries.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    report = _evaluate_with_rng(head, target_dataset, spec, episode_count, rng)
    report.spec["seed"] = seed
    return report


ABLATION_VARIANTS = (
    ("original", False, False),
    ("with_wd", False, True),
    ("with_con", True, False),
    ("with_wd_and_con", True, True),
)

# Published reference accuracies (percent) from the BERT-scale study this
# engine's method comes from. Kept for context only: absolute values
# require full-encoder fine-tuning on the original corpora and are out of
# reach for an embedding-level engine. Columns: 5w1s, 5w5s, 10w1s, 10w5s.
REFERENCE_ABLATION = {
    "note": ("Context only: published accuracies from the original BERT-scale "
             "experiments on the Pubmed/Semeval target domains. Not "
             "reproducible at desk scale; this engine reports its own "
             "synthetic-benchmark numbers."),
    "columns": ["5-way-1-shot", "5-way-5-shot", "10-way-1-shot", "10-way-5-shot"],
    "pubmed": {
        "original": [73.22, 83.12, 63.47, 71.59],
        "with_wd": [72.65, 82.97, 61.94, 72.47],
        "with_con": [74.11, 80.54, 62.75, 73.94],
        "with_wd_and_con": [73.75, 82.24, 66.94, 74.53],
    },
    "semeval": {
        "original": [49.98, 67.39, 38.19, 50.52],
        "with_wd": [51.46, 67.88, 38.46, 54.09],
        "with_con": [51.79, 67.50, 40.87, 55.49],
        "with_wd_and_con": [52.98, 68.45, 39.31, 56.65],
    },
}


def run_ablation(source: Dataset, target: Dataset, graph: RelationGraph,
                 base_config: TrainConfig, specs: list[EpisodeSpec],
                 seeds: list[int], eval_episodes: int = 200,
                 eval_seed: int = 10_000) -> dict:
    """Train all four loss variants and tabulate target accuracies.

    Every variant trains once per seed with an otherwise identical config
    (shared seed policy) and is evaluated on every requested task shape.
    Rows follow the order original, with_wd, with_con, with_wd_and_con.
    """
    rows = []
    for name, use_con, use_wd in ABLATION_VARIANTS:
        per_spec = {f"{s.n_way}w{s.k_shot}s": [] for s in specs}
        for seed in seeds:
            cfg = replace(base_config, use_con=use_con, use_wd=use_wd, seed=seed)
            result = train(source, target if use_wd else target, graph, cfg)
            for s in specs:
                rep = evaluate(result.head, target, s, eval_episodes,
                               eval_seed + seed)
                per_spec[f"{s.n_way}w{s.k_shot}s"].append(rep.accuracy)
        results = {}
        for key, accs in per_spec.items():
            arr = np.asarray(accs)
            sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            results[key] = {
                "mean_accuracy": float(arr.mean()),
                "ci95": float(1.96 * sd / np.sqrt(len(arr))),
                "per_seed": [float(a) for a in arr],
            }
        rows.append({"variant": name, "use_con": use_con, "use_wd": use_wd,
                     "results": results})
        logger.info("ablation variant %s done", name)
    return {
        "rows": rows,
        "seeds": list(seeds),
        "eval_episodes": eval_episodes,
        "reference_context": REFERENCE_ABLATION,
    }
