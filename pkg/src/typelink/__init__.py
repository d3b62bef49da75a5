"""Entity disambiguation with type-aware context embeddings.

Local candidate scoring over attended bag-of-words context plus a cosine
similarity against pooled masked-context entity embeddings, a fully-connected
pairwise CRF solved with damped max-product message passing, max-margin
training, and analysis tooling (type probe, Jaccard type injection, error
taxonomy, nearest-neighbour retrieval).
"""

from .data import (Candidate, DataError, Document, EmbeddingTable, Mention,
                   load_dataset, load_embeddings, load_type_map, log_prior,
                   save_dataset, split_document, write_embeddings, write_type_map)
from .embeddings import (ContextVector, aggregate_entity, build_entity_table,
                         cosine, nearest_contexts, nearest_entities,
                         read_context_vectors, read_mention_vectors,
                         write_context_vectors, write_mention_vectors)
from .crf import (LbpConfig, brute_force_max_marginals, final_scores,
                  pairwise_score, run_lbp)
from .entity_types import (ProbeConfig, ProbeModel, jaccard_sim, probe_eval,
                           probe_train, score_mention_typed)
from .evaluation import (CompareReport, ErrorReport, ErrorThresholds,
                         Prediction, categorize_errors, compare_runs, micro_f1,
                         predictions_from_forward, read_run, write_run)
from .local import (MentionScores, Resources, attention_context_repr,
                    score_mention_local, sim_scores)
from .params import Combiner, ModelParams, combine_local, load_params, save_params
from .scoring import backward_document, forward_document
from .train import (GradCheckReport, TrainConfig, TrainResult, grad_check,
                    l2_penalty, margin_loss, train)

__version__ = "0.1.0"
