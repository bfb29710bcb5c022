# Copyright 2026 British Broadcasting Corporation
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Two-stage training and held-out evaluation.

Stage 1 trains the transducer, the adaptor and the wait-k decoder together on normal speech, minimising the
transducer loss plus the decoder loss of each utterance. The adaptor reads the lattice over the model's own greedy
hypothesis, so the decoder loss reaches the encoder through both adaptor branches.

Stage 2 fine-tunes the transducer alone on batches of n dysarthric utterances and their n normal twins; every other
parameter is left bit-identical.

Both stages use plain gradient descent at a fixed learning rate.
"""

import csv
import logging
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .adaptor import AdaptorOutput
from .config import RunConfig, TrainConfig
from .corpus import Corpus, Utterance, NORMAL, DYSARTHRIC
from .exceptions import ContractError, DivergenceError, NumericError
from .metrics import corpus_token_error_rate
from .numerics import ComputeGraph, Tensor, add, mul, no_grad, reduce_mean, stack
from .pipeline import ModelBundle
from .quantizer import Codebook
from .transducer import AlignmentPath, JointLattice, transducer_loss
from .waitk import loss_parts, next_code_accuracy, per_k_ce

__all__ = ["build_models", "UtteranceLoss", "TrainLogRow", "TrainResult", "EvalSummary",
           "adapt_utterance", "stage1_loss", "stage2_loss", "balanced_batch", "stage1_train", "stage2_finetune",
           "evaluate", "evaluate_corpus", "write_train_log", "frozen_set"]

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "rnnt_loss", "ce_loss", "kd_loss", "total")


def build_models(cfg: RunConfig, codebook: Codebook, seed: Optional[int] = None) -> ModelBundle:
    return ModelBundle.build(cfg, codebook, seed)


class UtteranceLoss(NamedTuple):
    rnnt: Tensor
    ce: Tensor
    kd: Tensor
    total: Tensor


class TrainLogRow(NamedTuple):
    step: int
    rnnt_loss: float
    ce_loss: float
    kd_loss: float
    total: float


class TrainResult(NamedTuple):
    bundle: ModelBundle
    log: List[TrainLogRow]


def adapt_utterance(bundle: ModelBundle, x: np.ndarray) -> Tuple[Tensor, JointLattice, AlignmentPath, AdaptorOutput]:
    """Encode, decode greedily (unrecorded) and adapt one utterance

    :returns: the encoder outputs, the lattice over the greedy hypothesis, the greedy alignment and the adaptor output
    """
    transducer = bundle.transducer
    h_enc = transducer.encode(x)
    with no_grad():
        hyp, path = transducer.greedy_from_encoding(h_enc.values)
    lat = transducer.lattice(h_enc, hyp)
    return h_enc, lat, path, bundle.adaptor(lat, path, h_enc)


def stage1_loss(bundle: ModelBundle, utt: Utterance, cfg: TrainConfig) -> UtteranceLoss:
    """rnnt_weight * transducer loss + tts_weight * ((1 - alpha) * CE + alpha * KD)"""
    h_enc, _, _, adapted = adapt_utterance(bundle, utt.features)
    rnnt = transducer_loss(bundle.transducer.lattice(h_enc, utt.tokens), utt.tokens)
    tts = loss_parts(bundle.waitk, adapted.h_apt, utt.codes)
    total = add(mul(cfg.rnnt_weight, rnnt), mul(cfg.tts_weight, tts.total))
    return UtteranceLoss(rnnt, tts.ce, tts.kd, total)


def stage2_loss(bundle: ModelBundle, utt: Utterance) -> UtteranceLoss:
    rnnt = bundle.transducer.loss(utt.features, utt.tokens)
    zero = Tensor(0.0)
    return UtteranceLoss(rnnt, zero, zero, rnnt)


def balanced_batch(dysarthric: Sequence[Utterance], normal: Sequence[Utterance]) -> List[Utterance]:
    """Interleave n dysarthric and n normal utterances

    :raises ContractError: unless both halves hold the same number of utterances of the right variants
    """
    if len(dysarthric) != len(normal) or not dysarthric:
        raise ContractError("a balanced batch needs n dysarthric and n normal utterances, got {} and {}".format(
            len(dysarthric), len(normal)))
    if any(u.variant != DYSARTHRIC for u in dysarthric) or any(u.variant != NORMAL for u in normal):
        raise ContractError("balanced batch halves hold the wrong variants")
    return [u for pair in zip(dysarthric, normal) for u in pair]


def frozen_set(names: Sequence[str], prefixes: Sequence[str]) -> frozenset:
    """The parameter names starting with any of the given prefixes"""
    return frozenset(n for n in names if any(n.startswith(p) for p in prefixes))


def _batches(n_items: int, batch_size: int, rng: np.random.Generator) -> "Callable[[], List[int]]":
    order: List[int] = []

    def next_batch() -> List[int]:
        nonlocal order
        batch = []
        while len(batch) < min(batch_size, n_items):
            if not order:
                order = list(rng.permutation(n_items))
            batch.append(int(order.pop(0)))
        return batch
    return next_batch


def _run(bundle: ModelBundle, cfg: TrainConfig, frozen: frozenset,
         batch_losses: Callable[[], List[UtteranceLoss]], stage: int) -> List[TrainLogRow]:
    params = bundle.parameters()
    trainable = len(params) - len(frozen)
    logger.info("stage %d: %d steps over %d of %d parameter tensors at learning rate %g", stage, cfg.steps,
                trainable, len(params), cfg.learning_rate)
    log: List[TrainLogRow] = []
    for step in range(cfg.steps):
        params.zero_grad()
        try:
            with ComputeGraph() as graph:
                parts = batch_losses()
                total = reduce_mean(stack([p.total for p in parts]))
                row = TrainLogRow(step,
                                  float(np.mean([p.rnnt.item() for p in parts])),
                                  float(np.mean([p.ce.item() for p in parts])),
                                  float(np.mean([p.kd.item() for p in parts])),
                                  total.item())
                if not all(np.isfinite(v) for v in row[1:]):
                    raise DivergenceError("loss is not finite at step {}".format(step), step, row._asdict())
                graph.backward(total)
            params.sgd_step(cfg.learning_rate, frozen, cfg.clip_norm)
        except NumericError as e:
            raise DivergenceError("training diverged at step {}: {}".format(step, e.msg), step)
        log.append(row)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            logger.info("stage %d step %d: rnnt %.4f ce %.4f kd %.4f total %.4f", stage, *row)
    return log


def stage1_train(bundle: ModelBundle, utterances: Sequence[Utterance], cfg: TrainConfig,
                 seed: int = 0) -> TrainResult:
    """Joint training on normal utterances

    :raises ContractError: if cfg.stage is not 1 or there is nothing to train on
    :raises DivergenceError: if a loss stops being finite
    """
    if cfg.stage != 1:
        raise ContractError("stage1_train needs a stage 1 configuration")
    if not utterances:
        raise ContractError("no utterances to train on")
    next_batch = _batches(len(utterances), cfg.batch_size, np.random.default_rng(seed))
    frozen = frozen_set(bundle.parameters().names(), cfg.frozen)

    def losses() -> List[UtteranceLoss]:
        return [stage1_loss(bundle, utterances[i], cfg) for i in next_batch()]

    return TrainResult(bundle, _run(bundle, cfg, frozen, losses, 1))


def stage2_finetune(bundle: ModelBundle, corpus: Corpus, cfg: TrainConfig, seed: int = 0) -> TrainResult:
    """Fine-tune the transducer on balanced batches of the corpus's training pairs

    Each batch draws cfg.batch_size pairs and holds the dysarthric and the normal utterance of each.

    :raises ContractError: if cfg.stage is not 2 or there is nothing to train on
    :raises DivergenceError: if a loss stops being finite
    """
    if cfg.stage != 2:
        raise ContractError("stage2_finetune needs a stage 2 configuration")
    dys = corpus.variant(DYSARTHRIC, held_out=False)
    normal = corpus.variant(NORMAL, held_out=False)
    if not dys:
        raise ContractError("no utterance pairs to fine-tune on")
    next_batch = _batches(len(dys), cfg.batch_size, np.random.default_rng(seed))
    frozen = bundle.frozen_names(2) | frozen_set(bundle.parameters().names(), cfg.frozen)

    def losses() -> List[UtteranceLoss]:
        idx = next_batch()
        return [stage2_loss(bundle, u) for u in balanced_batch([dys[i] for i in idx], [normal[i] for i in idx])]

    return TrainResult(bundle, _run(bundle, cfg, frozen, losses, 2))


def write_train_log(rows: Sequence[TrainLogRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in rows:
            writer.writerow([row.step] + ["{!r}".format(v) for v in row[1:]])


class EvalSummary(NamedTuple):
    """Held-out quality of one variant"""
    variant: str
    utterances: int
    token_error_rate: float
    next_code_accuracy: float
    per_k_ce: Dict[int, float]


def evaluate(bundle: ModelBundle, utterances: Sequence[Utterance], k: int,
             ks: Optional[Sequence[int]] = None) -> EvalSummary:
    """Greedy token error rate, teacher-forced next-code accuracy at offset k and per-offset cross-entropy.

    Accuracy is weighted by frames; cross-entropy is the mean over utterances.
    """
    if not utterances:
        raise ContractError("nothing to evaluate")
    ks = tuple(ks) if ks is not None else bundle.waitk.cfg.ks
    hyps, refs = [], []
    correct = 0.0
    frames = 0
    ce: Dict[int, List[float]] = {kk: [] for kk in ks}
    for utt in utterances:
        _, _, path, adapted = adapt_utterance(bundle, utt.features)
        hyps.append([e.token for e in path if e.emitted])
        refs.append(list(utt.tokens))
        correct += next_code_accuracy(bundle.waitk, adapted.h_apt, utt.codes, k) * utt.T
        frames += utt.T
        for kk, v in per_k_ce(bundle.waitk, adapted.h_apt, utt.codes, ks).items():
            ce[kk].append(v)
    return EvalSummary(utterances[0].variant, len(utterances), corpus_token_error_rate(hyps, refs),
                       correct / frames, {kk: float(np.mean(v)) for kk, v in ce.items()})


def evaluate_corpus(bundle: ModelBundle, corpus: Corpus, k: int) -> Dict[str, EvalSummary]:
    """Held-out summaries per variant; the whole corpus is used if nothing is held out"""
    out = {}
    for variant in (NORMAL, DYSARTHRIC):
        utts = corpus.variant(variant, held_out=True) if corpus.held_out else corpus.variant(variant)
        out[variant] = evaluate(bundle, utts, k)
        logger.info("%s: TER %.4f, next-code accuracy %.4f", variant, out[variant].token_error_rate,
                    out[variant].next_code_accuracy)
    return out
