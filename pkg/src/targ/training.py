"""Joint selection/generation objective, Adam, and the training/evaluation loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .corpus import Corpus, Example, Vocabulary, iter_examples, tokenize
from .metrics import MetricsReport, build_report
from .model import Batch, TARGModel
from .nn import RngStreams
from .tensor import NonFiniteError, Tape, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass
class ClampCounter:
    """Counts gold probabilities that fell below the log floor."""

    count: int = 0

    def observe(self, probs: np.ndarray, mask: np.ndarray | None = None) -> None:
        low = probs < PROB_FLOOR
        if mask is not None:
            low &= mask
        n = int(low.sum())
        if n:
            log.warning("%d gold probabilities clamped at %g", n, PROB_FLOOR)
        self.count += n


def _neg_log(p: Tensor, counter: ClampCounter | None, mask=None) -> Tensor:
    if counter is not None:
        counter.observe(p.data, mask)
    return -T.log(T.clamp_min(p, PROB_FLOOR))


def selection_loss(p_start: Tensor, p_end: Tensor, gold: np.ndarray,
                   counter: ClampCounter | None = None) -> Tensor:
    """Mean over examples of -(log p_start[s*] + log p_end[e*]).

    ``p_start``/``p_end`` are (B, M) or (M,); ``gold`` is (B, 2) or (2,).
    """
    gold = np.asarray(gold, dtype=np.int64)
    if p_start.ndim == 1:
        p_start, p_end, gold = p_start.reshape(1, -1), p_end.reshape(1, -1), gold.reshape(1, 2)
    M = p_start.shape[-1]
    if (gold < 0).any() or (gold >= M).any():
        raise IndexError(f"gold span {gold.tolist()} outside {M} knowledge positions")
    ps = T.take_along_last(p_start, gold[:, :1])
    pe = T.take_along_last(p_end, gold[:, 1:])
    return (_neg_log(ps, counter) + _neg_log(pe, counter)).mean()


def generation_loss(gold_probs: Tensor, mask: np.ndarray | None = None,
                    counter: ClampCounter | None = None) -> Tensor:
    """Per-example mean of -log p(gold token) over valid positions, then mean over examples.

    ``gold_probs`` is (B, L) (or (L,)) holding the model probability of each
    gold token, EOS included.
    """
    if gold_probs.ndim == 1:
        gold_probs = gold_probs.reshape(1, -1)
        mask = None if mask is None else np.asarray(mask).reshape(1, -1)
    m = np.ones(gold_probs.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lengths = m.sum(axis=-1)
    if (lengths == 0).any():
        raise ValueError("empty gold sequence")
    nll = _neg_log(gold_probs, counter, m) * m.astype(np.float64)
    per_example = nll.sum(axis=-1) * (1.0 / lengths)
    return per_example.mean()


def joint_loss(l_s: Tensor, l_g: Tensor, lam: float) -> Tensor:
    return l_s * lam + l_g * (1.0 - lam)


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class StepResult:
    loss: float
    l_s: float
    l_g: float


def compute_losses(model: TARGModel, batch: Batch, rngs: RngStreams | None, training: bool,
                   counter: ClampCounter | None = None) -> tuple[Tensor, Tensor, Tensor]:
    out = model.forward(batch, rngs, training)
    l_s = selection_loss(out.p_start, out.p_end, batch.gold_span, counter)
    l_g = generation_loss(out.gen_probs, batch.dec_mask, counter)
    return joint_loss(l_s, l_g, model.config.lam), l_s, l_g


def joint_step(model: TARGModel, batch: Batch, opt: Adam, rngs: RngStreams | None = None,
               counter: ClampCounter | None = None) -> StepResult:
    """Forward, backward and one Adam update; gradients are cleared afterward."""
    with Tape():
        loss, l_s, l_g = compute_losses(model, batch, rngs, True, counter)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss (L_s={l_s.item()}, L_g={l_g.item()}) "
                                f"in batch starting at dialogue {batch.examples[0].dialogue_id}")
        try:
            T.backward(loss, opt.params)
        except NonFiniteError as e:
            raise TrainingError(f"non-finite gradient: {e}") from e
    opt.step()
    opt.zero_grad()
    return StepResult(loss.item(), l_s.item(), l_g.item())


def dialogue_batches(examples: list[Example], batch_size: int, rng: np.random.Generator | None
                     ) -> list[list[Example]]:
    """Group examples by dialogue, optionally shuffle dialogues, take ``batch_size`` per batch."""
    groups: dict[str, list[Example]] = {}
    for ex in examples:
        groups.setdefault(ex.dialogue_id, []).append(ex)
    order = list(groups)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    return [[ex for d in order[i:i + batch_size] for ex in groups[d]]
            for i in range(0, len(order), batch_size)]


@dataclass
class Predictions:
    examples: list[Example]
    spans: list[tuple[int, int]]
    rankings: list[list[int]]
    tokens: list[list[str]]


def predict(model: TARGModel, corpus: Corpus, batch_size: int | None = None,
            beam: int = 1) -> Predictions:
    c = model.config
    examples = iter_examples(corpus, c.max_turns)
    spans, ranks, toks = [], [], []
    for group in dialogue_batches(examples, batch_size or c.batch_size, None):
        batch = model.make_batch(group, corpus)
        s, r, t, _ = model.predict(batch, beam=beam)
        spans.extend(tuple(int(v) for v in x) for x in s)
        ranks.extend([m for m, _ in rr] for rr in r)
        toks.extend(model.vocab.decode(x) for x in t)
    return Predictions(examples, spans, ranks, toks)


def gold_factoids(span: tuple[int, int]) -> list[int]:
    s, e = span
    return [] if (s, e) == (0, 0) else list(range(s, e + 1))


def evaluate(model: TARGModel, corpus: Corpus, preds: Predictions | None = None) -> MetricsReport:
    preds = preds or predict(model, corpus)
    ex = preds.examples
    return build_report(
        preds.spans, [e.gold_span for e in ex], preds.rankings,
        [gold_factoids(e.gold_span) for e in ex], preds.tokens,
        [tokenize(e.response) for e in ex], [e.dialogue_id for e in ex])


@dataclass
class TrainResult:
    model: TARGModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metrics: MetricsReport | None = None
    cpu_seconds: float = 0.0
    clamped: int = 0


def _selection_key(m: MetricsReport) -> tuple[float, float]:
    return (m.em, m.bleu["4"])


def train(corpus: Corpus, dev: Corpus | None, config: TrainConfig,
          vocab: Vocabulary | None = None, log_path: str | Path | None = None,
          checkpoint_path: str | Path | None = None) -> TrainResult:
    """Train with per-epoch shuffling; keeps (and optionally saves) the best-dev parameters."""
    from .checkpoint import save_checkpoint

    config.validate()
    examples = iter_examples(corpus, config.max_turns)
    if not examples:
        raise TrainingError("training corpus has no system turns")
    if vocab is None:
        vocab = Vocabulary.from_corpus(corpus, config.max_turns)
        if dev is not None:
            for d in dev.documents:
                for f in d.factoids:
                    vocab.add_text(f.text)
    model = TARGModel(config, vocab)
    opt = Adam(list(model.params), config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)
    rngs = RngStreams(config.seed)
    shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    counter = ClampCounter()
    result = TrainResult(model)
    best_key = None
    best_snap = None
    cpu0 = time.process_time()
    if log_path is not None:
        Path(log_path).write_text("")
    for epoch in range(1, config.epochs + 1):
        groups = dialogue_batches(examples, config.batch_size, shuffle)
        sums = np.zeros(3)
        for g in groups:
            r = joint_step(model, model.make_batch(g, corpus), opt, rngs, counter)
            sums += (r.loss, r.l_s, r.l_g)
        sums /= len(groups)
        entry = {"epoch": epoch, "L": sums[0], "L_s": sums[1], "L_g": sums[2]}
        if dev is not None:
            m = evaluate(model, dev)
            entry["dev"] = {"em": m.em, "token_f1": m.token_f1, "bleu": m.bleu}
            if best_key is None or _selection_key(m) > best_key:
                best_key, best_snap = _selection_key(m), model.params.snapshot()
                result.best_epoch, result.best_metrics = epoch, m
        result.history.append(entry)
        log.info("epoch %d L=%.4f L_s=%.4f L_g=%.4f%s", epoch, *sums,
                 f" dev_em={entry['dev']['em']:.3f}" if "dev" in entry else "")
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if best_snap is not None:
        model.params.restore(best_snap)
    result.cpu_seconds = time.process_time() - cpu0
    result.clamped = counter.count
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return result
