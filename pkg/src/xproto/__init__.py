"""Cross-domain few-shot relation classification over precomputed embeddings.

Prototype-based episodic training with a relation-graph prior, stochastic
Langevin prototype refinement, contrastive representation losses, and a
Sinkhorn-based Wasserstein alignment loss between domains.
"""

from .data import (Dataset, EmbeddedSample, Episode, EpisodeSpec, load_dataset,
                   sample_episode, sample_target_batch, write_dataset)
from .encoder import (EncoderHead, GradBuffer, OptimizerState, backward, encode,
                      gradient_check, init_head, init_optimizer, load_checkpoint,
                      optimizer_step, save_checkpoint)
from .graph import (PrototypeSet, RelationGraph, build_knn_graph, graph_features,
                    init_prototypes, langevin_update, load_graph,
                    support_likelihood, write_graph)
from .losses import (LossValue, loss_cls, loss_s2s, loss_s2v, pair_distance,
                     representation_loss)
from .pipeline import (EvalReport, TargetPrototypes, TrainConfig, TrainResult,
                       adapt, evaluate, predict, run_ablation, train)
from .sinkhorn import (SinkhornConfig, TransportPlan, adversarial_loss,
                       cost_matrix, exact_ot_oracle, sinkhorn)
from .synth import SyntheticData, generate_synthetic

__version__ = "0.1.0"
