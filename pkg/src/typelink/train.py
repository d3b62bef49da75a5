"""Max-margin training of all learnable blocks.

One optimizer step per document: every candidate of every trainable mention
contributes a hinge against the gold score, combiner weights carry an L2
penalty, and gradients are the manual backward passes from the scoring
module. Runs are deterministic given the seed; embedding tables are never
written to.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crf import LbpConfig
from .data import Document, split_document, MAX_MENTIONS_PER_DOC
from .local import Counters, Resources
from .optim import Adam
from .params import LOCAL_MODES, ModelParams
from .scoring import backward_document, forward_document

DEFAULT_EPOCHS = {"local-style": 2, "local_global": 10}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "local"
    gamma: float = 0.01          # ranking margin
    l2: float = 1e-7             # penalty on combiner weights
    lr: float = 1e-3
    epochs: int | None = None    # default 2 for local-style modes, 10 for local_global
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    lbp: LbpConfig = field(default_factory=LbpConfig)
    grad_mode: str = "stop"      # "stop" or "unroll" through message passing
    hidden: int = 100
    shuffle: bool = True
    mention_cap: int = MAX_MENTIONS_PER_DOC

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        key = "local-style" if self.mode in LOCAL_MODES else "local_global"
        return DEFAULT_EPOCHS[key]


def margin_loss(scores: np.ndarray, gold_index: int, gamma: float) -> float:
    """Sum over candidates of max(0, gamma - s(gold) + s(e)); the gold term is gamma."""
    scores = np.asarray(scores, dtype=np.float64)
    if not (0 <= gold_index < len(scores)):
        raise IndexError(f"gold index {gold_index} out of range for {len(scores)} candidates")
    # grouped so the gold candidate's margin is exactly gamma
    hinge = np.maximum(0.0, gamma + (scores - scores[gold_index]))
    return float(hinge.sum())


def margin_loss_grad(scores: np.ndarray, gold_index: int,
                     gamma: float) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. the candidate scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if not (0 <= gold_index < len(scores)):
        raise IndexError(f"gold index {gold_index} out of range for {len(scores)} candidates")
    margins = gamma + (scores - scores[gold_index])
    active = margins > 0.0
    active[gold_index] = False  # the gold term is the constant gamma
    grad = active.astype(np.float64)
    grad[gold_index] = -float(active.sum())
    return float(np.maximum(margins, 0.0).sum()), grad


def l2_penalty(params: ModelParams, coeff: float) -> float:
    """coeff * sum of squared combiner weights (diagonals and embeddings excluded)."""
    blocks = params.blocks()
    return coeff * float(sum(np.sum(np.square(blocks[k]))
                             for k in params.combiner_block_names()))


def _l2_grads(params: ModelParams, coeff: float, grads: dict[str, np.ndarray]) -> None:
    blocks = params.blocks()
    for name in params.combiner_block_names():
        grads[name] += 2.0 * coeff * blocks[name]


def document_loss_and_grads(doc: Document, res: Resources, params: ModelParams,
                            config: TrainConfig, counters: Counters,
                            fixed_msg_in: list[np.ndarray] | None = None,
                            ) -> tuple[float, dict[str, np.ndarray], int]:
    """Hinge loss plus L2 and its gradients for one document.

    Mentions whose gold entity is missing from the candidate list are skipped
    and counted. Returns (loss, grads, trainable mention count).
    """
    want_trace = config.grad_mode == "unroll" and params.mode == "local_global"
    fwd = forward_document(doc, res, params, config.lbp, counters,
                           want_trace=want_trace, fixed_msg_in=fixed_msg_in)
    total = 0.0
    trainable = 0
    dscores = [np.zeros_like(s) for s in fwd.scores]
    for idx, mention in enumerate(doc.mentions):
        gold_idx = mention.gold_index()
        if gold_idx is None:
            counters.bump("skipped_untrainable_mentions")
            continue
        loss, grad = margin_loss_grad(fwd.scores[idx], gold_idx, config.gamma)
        total += loss
        dscores[idx] = grad
        trainable += 1
    grads = backward_document(fwd, res, params, dscores, grad_mode=config.grad_mode)
    total += l2_penalty(params, config.l2)
    _l2_grads(params, config.l2, grads)
    return total, grads, trainable


@dataclass
class TrainResult:
    params: ModelParams
    epoch_losses: list[float]
    counters: Counters
    steps: int


def _check_finite(loss: float, grads: dict[str, np.ndarray], doc_id: str) -> None:
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss on document {doc_id!r}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in block {name!r} on document {doc_id!r}")


def train(dataset: list[Document], res: Resources, config: TrainConfig,
          params: ModelParams | None = None) -> TrainResult:
    """Train a model variant over the dataset, one document per step."""
    if not dataset:
        raise ValueError("empty dataset")
    docs = [chunk for doc in dataset for chunk in split_document(doc, config.mention_cap)]
    if params is None:
        params = ModelParams.create(res.entity_table.dim, config.mode,
                                    seed=config.seed, hidden=config.hidden)
    elif params.mode != config.mode:
        raise ValueError(f"params mode {params.mode!r} != config mode {config.mode!r}")
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    opt = Adam(params.blocks(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    counters = Counters()
    epoch_losses = []
    steps = 0
    any_trainable = False
    for _ in range(config.resolved_epochs()):
        order = rng.permutation(len(docs)) if config.shuffle else np.arange(len(docs))
        epoch_loss = 0.0
        for doc_idx in order:
            doc = docs[doc_idx]
            loss, grads, trainable = document_loss_and_grads(
                doc, res, params, config, counters)
            _check_finite(loss, grads, doc.id)
            if trainable == 0:
                continue
            any_trainable = True
            opt.step(grads)
            epoch_loss += loss
            steps += 1
        epoch_losses.append(epoch_loss)
    if config.resolved_epochs() > 0 and not any_trainable:
        raise ValueError("no trainable mention in the dataset (gold always missing)")
    return TrainResult(params=params, epoch_losses=epoch_losses,
                       counters=counters, steps=steps)


# ---------------------------------------------------------------------------
# gradient verification


def _dataset_loss(docs: list[Document], res: Resources, params: ModelParams,
                  config: TrainConfig,
                  fixed_msgs: list[list[np.ndarray] | None]) -> float:
    total = 0.0
    counters = Counters()
    for doc, fixed in zip(docs, fixed_msgs):
        fwd = forward_document(doc, res, params, config.lbp, counters,
                               fixed_msg_in=fixed)
        for idx, mention in enumerate(doc.mentions):
            gold_idx = mention.gold_index()
            if gold_idx is None:
                continue
            total += margin_loss(fwd.scores[idx], gold_idx, config.gamma)
    return total + l2_penalty(params, config.l2)


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_block: dict[str, float]

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def grad_check(docs: list[Document], res: Resources, params: ModelParams,
               config: TrainConfig, step: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of the total loss with central differences.

    In local_global mode with stop gradients, the finite-difference objective
    freezes the incoming-message totals at their current-parameter values, the
    same convention the analytic backward uses.
    """
    counters = Counters()
    fixed_msgs: list[list[np.ndarray] | None] = []
    use_fixed = params.mode == "local_global" and config.grad_mode == "stop"
    for doc in docs:
        if use_fixed:
            fwd = forward_document(doc, res, params, config.lbp, counters)
            fixed_msgs.append(fwd.msg_in)
        else:
            fixed_msgs.append(None)

    analytic = {name: np.zeros_like(arr) for name, arr in params.blocks().items()}
    for doc, fixed in zip(docs, fixed_msgs):
        _, grads, _ = document_loss_and_grads(doc, res, params, config, counters,
                                              fixed_msg_in=fixed)
        for name in analytic:
            analytic[name] += grads[name]
    # document_loss_and_grads adds the L2 term once per document
    blocks = params.blocks()
    if len(docs) > 1:
        for name in params.combiner_block_names():
            analytic[name] -= 2.0 * config.l2 * blocks[name] * (len(docs) - 1)

    # the difference of two loss evaluations carries cancellation noise around
    # eps * |loss|; keep the relative-error floor above what central
    # differences can actually resolve at this step size
    base_loss = abs(_dataset_loss(docs, res, params, config, fixed_msgs))
    floor = max(1e-5, 100.0 * np.finfo(float).eps * base_loss / step)

    per_block = {}
    worst = 0.0
    for name, arr in blocks.items():
        flat = arr.ravel()
        block_err = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = _dataset_loss(docs, res, params, config, fixed_msgs)
            flat[k] = orig - step
            down = _dataset_loss(docs, res, params, config, fixed_msgs)
            flat[k] = orig
            fd = (up - down) / (2.0 * step)
            an = analytic[name].ravel()[k]
            err = abs(an - fd) / max(floor, abs(an), abs(fd))
            block_err = max(block_err, err)
        per_block[name] = block_err
        worst = max(worst, block_err)
    return GradCheckReport(max_rel_err=worst, per_block=per_block)
