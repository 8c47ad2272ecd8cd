"""Metric suite: category accuracy via an independently trained convolutional
sentence classifier, teacher-forced perplexity, and corpus-level forward /
backward / harmonic BLEU.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, DataError
from . import numeric as nm
from .numeric import ParamStore, Rng, Tensor
from .model import CatVrnnParams, ModelConfig, forward_teacher, generate
from .data import (
    Batch,
    LabeledCorpus,
    LabeledSentence,
    Vocabulary,
    build_vocabulary,
    encode_batch,
)
from .training import AdamState, adam_step, _collect_grads

log = logging.getLogger(__name__)

BLEU_EPS = 1e-9


# --- convolutional sentence classifier --------------------------------------


@dataclass
class ClassifierConfig:
    vocab_size: int
    num_categories: int
    max_len: int
    embed_dim: int = 128
    filter_widths: tuple[int, ...] = (3, 4, 5)
    feature_maps: int = 100
    dropout: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        d = dict(d)
        d["filter_widths"] = tuple(d["filter_widths"])
        return cls(**d)


class EvalClassifier:
    """Kim-style text CNN: embedding, parallel convolutions over token
    windows, max-over-time pooling, dropout (training only), linear head.

    Trained on real data only and frozen at scoring time; scoring generated
    text with the generator's own head would be circular.
    """

    def __init__(self, cfg: ClassifierConfig, vocab: Vocabulary,
                 rng: Rng | None = None, tensors: dict[str, np.ndarray] | None = None):
        if cfg.max_len < max(cfg.filter_widths):
            raise ConfigurationError(
                f"max_len {cfg.max_len} shorter than widest filter "
                f"{max(cfg.filter_widths)}"
            )
        self.cfg = cfg
        self.vocab = vocab
        self.store = ParamStore()
        self.val_accuracy: float | None = None
        gen = rng.stream("init") if rng is not None else None
        dt = np.float64

        def param(name, shape, scale=None):
            if tensors is not None:
                arr = np.asarray(tensors[name], dtype=dt)
                if arr.shape != tuple(shape):
                    raise ConfigurationError(
                        f"classifier tensor {name!r} has shape {arr.shape}, "
                        f"expected {tuple(shape)}"
                    )
                return self.store.add(name, arr.copy())
            if gen is None or scale is None:
                return self.store.add(name, np.zeros(shape, dtype=dt))
            return self.store.add(name, gen.uniform(-scale, scale, size=shape))

        param("embedding", (cfg.vocab_size, cfg.embed_dim), scale=0.1)
        for w in cfg.filter_widths:
            fan_in = w * cfg.embed_dim
            limit = np.sqrt(6.0 / (fan_in + cfg.feature_maps))
            param(f"conv{w}.w", (fan_in, cfg.feature_maps), scale=limit)
            param(f"conv{w}.b", (cfg.feature_maps,))
        head_in = cfg.feature_maps * len(cfg.filter_widths)
        limit = np.sqrt(6.0 / (head_in + cfg.num_categories))
        param("head.w", (head_in, cfg.num_categories), scale=limit)
        param("head.b", (cfg.num_categories,))

    def logits(self, ids: np.ndarray, train_mode: bool = False,
               dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Class logits for encoded inputs (B, T)."""
        ids = np.asarray(ids, dtype=np.int64)
        b, t = ids.shape
        pooled = []
        for w in self.cfg.filter_widths:
            npos = t - w + 1
            # windows of token ids, flattened so one gather serves all positions
            win = np.lib.stride_tricks.sliding_window_view(ids, w, axis=1)
            flat = win.reshape(b * npos * w)
            emb = nm.gather_rows(self.store["embedding"], flat)
            emb = nm.reshape(emb, (b * npos, w * self.cfg.embed_dim))
            conv = nm.relu(nm.linear(emb, self.store[f"conv{w}.w"],
                                     self.store[f"conv{w}.b"]))
            pooled.append(nm.max_pool_rows(conv, npos))
        features = nm.concat(pooled, axis=-1)
        if train_mode and self.cfg.dropout > 0:
            if dropout_rng is None:
                raise ConfigurationError("training-mode logits need a dropout rng")
            keep = 1.0 - self.cfg.dropout
            mask = (dropout_rng.random(features.data.shape) < keep) / keep
            features = nm.mul(features, Tensor(mask))
        return nm.linear(features, self.store["head.w"], self.store["head.b"])

    def predict(self, ids: np.ndarray) -> np.ndarray:
        with nm.no_grad():
            return self.logits(ids).data.argmax(axis=1)

    def encode_sentences(self, sentences: list[LabeledSentence]) -> Batch:
        clipped = []
        for s in sentences:
            if len(s.tokens) > self.cfg.max_len:
                clipped.append(LabeledSentence(s.tokens[: self.cfg.max_len],
                                               s.category))
            else:
                clipped.append(s)
        return encode_batch(clipped, self.vocab, self.cfg.max_len)

    def save(self, path):
        from .training import write_container

        meta = {
            "kind": "eval_classifier",
            "config": self.cfg.to_dict(),
            "vocab": self.vocab.id_to_token,
            "val_accuracy": self.val_accuracy,
        }
        write_container(path, meta, dict(self.store.state_arrays()))

    @classmethod
    def load(cls, path) -> "EvalClassifier":
        from .training import read_container

        header, arrays = read_container(path)
        if header.get("kind") != "eval_classifier":
            raise DataError(f"{path}: not an eval-classifier checkpoint")
        clf = cls(ClassifierConfig.from_dict(header["config"]),
                  Vocabulary(header["vocab"]), tensors=arrays)
        clf.val_accuracy = header.get("val_accuracy")
        return clf


def train_eval_classifier(corpus: LabeledCorpus, seed: int, epochs: int = 25,
                          batch_size: int = 32, lr: float = 1e-3,
                          val_fraction: float = 0.1,
                          max_len: int | None = None) -> EvalClassifier:
    """Train the scoring classifier on real data with a stratified validation
    split; the resulting weights are a pure function of (corpus, seed)."""
    if corpus.num_categories < 2:
        raise DataError("classifier training needs at least two categories")
    vocab = build_vocabulary(corpus)
    t = max(max_len or corpus.max_length(), 5)
    cfg = ClassifierConfig(vocab_size=len(vocab),
                           num_categories=corpus.num_categories, max_len=t)
    rng = Rng(seed)
    clf = EvalClassifier(cfg, vocab, rng=rng)

    split_rng = np.random.default_rng(nm._stream_seed(seed, "clf-split"))
    by_cat: dict[int, list[int]] = {}
    for i, s in enumerate(corpus.sentences):
        by_cat.setdefault(s.category, []).append(i)
    val_idx: list[int] = []
    for cat in sorted(by_cat):
        pool = np.array(by_cat[cat])
        n_val = max(1, int(round(len(pool) * val_fraction)))
        val_idx.extend(split_rng.permutation(pool)[:n_val].tolist())
    val_set = set(val_idx)
    train_sents = [s for i, s in enumerate(corpus.sentences) if i not in val_set]
    val_sents = [corpus.sentences[i] for i in sorted(val_set)]

    train_batch = clf.encode_sentences(train_sents)
    val_batch = clf.encode_sentences(val_sents)
    adam = AdamState(clf.store, lr=lr)
    dropout_rng = rng.stream("dropout")
    for epoch in range(1, epochs + 1):
        order_rng = np.random.default_rng(nm._stream_seed(seed, f"clf-ep{epoch}"))
        order = order_rng.permutation(len(train_sents))
        for start in range(0, len(order), batch_size):
            idx = order[start: start + batch_size]
            logits = clf.logits(train_batch.inputs[idx], train_mode=True,
                                dropout_rng=dropout_rng)
            loss = nm.mean(nm.cross_entropy_rows(logits, train_batch.categories[idx]))
            clf.store.zero_grad()
            loss.backward()
            adam_step(clf.store, _collect_grads(clf.store), adam)
    preds = clf.predict(val_batch.inputs)
    clf.val_accuracy = float((preds == val_batch.categories).mean())
    log.info("classifier validation accuracy: %.4f", clf.val_accuracy)
    return clf


def category_accuracy(samples: list[tuple[list[str], int]],
                      clf: EvalClassifier) -> float:
    """Fraction of generated sentences whose predicted class matches the
    intended category. Empty token lists count as misses."""
    if not samples:
        raise DataError("no generated sentences to score")
    nonempty = [(tokens, cat) for tokens, cat in samples if tokens]
    if not nonempty:
        return 0.0
    batch = clf.encode_sentences(
        [LabeledSentence(tuple(tokens), cat) for tokens, cat in nonempty]
    )
    preds = clf.predict(batch.inputs)
    hits = int((preds == batch.categories).sum())
    return hits / len(samples)


# --- perplexity --------------------------------------------------------------


def perplexity(params: CatVrnnParams, cfg: ModelConfig, corpus: LabeledCorpus,
               vocab: Vocabulary, seed: int = 0, batch_size: int = 64) -> float:
    """exp of the mean per-token cross-entropy under teacher forcing.

    Scored positions per sentence: the real tokens plus one terminating PAD
    when it fits inside max_len; the padding tail is excluded so PAD
    repetition earns nothing.
    """
    if not corpus.sentences:
        raise DataError("cannot score an empty corpus")
    batch = encode_batch(corpus.sentences, vocab, cfg.max_len)
    rng = Rng(seed)
    ll_sum = 0.0
    n_positions = 0
    with nm.no_grad():
        for start in range(0, len(batch), batch_size):
            sl = slice(start, start + batch_size)
            fwd = forward_teacher(batch.inputs[sl], batch.categories[sl], params,
                                  cfg, rng, train_mode=False)
            lengths = batch.lengths[sl]
            scored = np.minimum(lengths + 1, cfg.max_len)
            for t, logits in enumerate(fwd.step_logits):
                active = scored > t
                if not active.any():
                    break
                logp = nm._log_softmax_np(logits.data[active])
                rows = np.arange(active.sum())
                ll_sum -= float(logp[rows, batch.targets[sl][active, t]].sum())
                n_positions += int(active.sum())
    return float(np.exp(ll_sum / n_positions))


# --- BLEU ---------------------------------------------------------------------


@dataclass
class NgramStats:
    """Corpus-level clipped counts per order, candidate totals, and the
    brevity inputs."""

    clipped: list[int]
    totals: list[int]
    candidate_len: int
    reference_len: int


def _ngrams(tokens, k: int) -> Counter:
    return Counter(tuple(tokens[i: i + k]) for i in range(len(tokens) - k + 1))


def corpus_ngram_stats(candidates, references, n: int) -> NgramStats:
    """Clipped modified k-gram matches for k = 1..n, every candidate scored
    against the full reference set; reference length is the closest reference
    length per candidate (ties toward the shorter)."""
    ref_ngrams: list[dict] = []
    for k in range(1, n + 1):
        merged: dict = {}
        for ref in references:
            for gram, cnt in _ngrams(ref, k).items():
                if cnt > merged.get(gram, 0):
                    merged[gram] = cnt
        ref_ngrams.append(merged)
    ref_lens = sorted(len(r) for r in references)
    clipped = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    ref_lens_arr = np.array(ref_lens)
    for cand in candidates:
        cand_len += len(cand)
        pos = int(np.argmin(np.abs(ref_lens_arr - len(cand))))
        ref_len += int(ref_lens_arr[pos])
        for k in range(1, n + 1):
            counts = _ngrams(cand, k)
            totals[k - 1] += max(len(cand) - k + 1, 0)
            merged = ref_ngrams[k - 1]
            clipped[k - 1] += sum(
                min(cnt, merged.get(gram, 0)) for gram, cnt in counts.items()
            )
    return NgramStats(clipped=clipped, totals=totals, candidate_len=cand_len,
                      reference_len=ref_len)


def bleu_corpus(candidates, references, n: int) -> float:
    """Corpus-level BLEU-n: geometric mean of the clipped modified k-gram
    precisions for k = 1..n (zero match counts floored at 1e-9), times the
    brevity penalty. Orders with no candidate k-grams at all are skipped.
    """
    if not 2 <= n <= 5:
        raise ConfigurationError(f"n must be in 2..5, got {n}")
    candidates = [tuple(c) for c in candidates]
    references = [tuple(r) for r in references]
    if not candidates or not references:
        raise DataError("BLEU needs non-empty candidate and reference sides")
    stats = corpus_ngram_stats(candidates, references, n)
    log_sum = 0.0
    used = 0
    for clipped, total in zip(stats.clipped, stats.totals):
        if total == 0:
            continue
        log_sum += np.log(max(clipped, BLEU_EPS) / total)
        used += 1
    precision = np.exp(log_sum / used) if used else 1.0
    c, r = stats.candidate_len, stats.reference_len
    bp = 1.0 if c > r else np.exp(1.0 - r / c)
    return float(precision * bp)


def bleu_harmonic(f: float, b: float) -> float:
    """Harmonic mean 2fb/(f+b); zero when both sides are zero."""
    if f < 0 or b < 0:
        raise ConfigurationError("BLEU values must be non-negative")
    if f + b == 0:
        return 0.0
    return 2.0 * f * b / (f + b)


# --- full report --------------------------------------------------------------


@dataclass
class MetricsReport:
    category_accuracy: float | None
    perplexity: float | None
    bleu_f: dict[int, float]
    bleu_b: dict[int, float]
    bleu_ha: dict[int, float]
    n_samples_per_category: int
    num_categories: int
    seed: int
    backward_subsampled: bool = False
    backward_subsample_seed: int | None = None
    classifier_val_accuracy: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("bleu_f", "bleu_b", "bleu_ha"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return json.dumps(d, indent=2, sort_keys=True)


def eval_report(params: CatVrnnParams, cfg: ModelConfig, corpus: LabeledCorpus,
                vocab: Vocabulary, clf: EvalClassifier | None, n_samples: int,
                seed: int, bleu_orders=(2, 3, 4, 5),
                backward_cap: int = 5000,
                generated: list[tuple[list[str], int]] | None = None) -> MetricsReport:
    """Generate per-category samples (unless supplied), then compute category
    accuracy, teacher-forced perplexity on the real corpus, and the BLEU
    family against the training sentences."""
    rng = Rng(seed)
    if generated is None:
        generated = []
        for cat in range(cfg.num_categories):
            for ids in generate(cat, n_samples, params, cfg, rng):
                generated.append(([vocab.decode_id(i) for i in ids], cat))
    if not generated:
        raise DataError("nothing generated to evaluate")

    acc = category_accuracy(generated, clf) if clf is not None else None
    ppl = perplexity(params, cfg, corpus, vocab, seed=seed) if params is not None else None

    gen_tokens = [tuple(tokens) for tokens, _ in generated if tokens]
    real_tokens = [s.tokens for s in corpus.sentences]
    if not gen_tokens:
        raise DataError("all generated sentences were empty")

    subsampled = False
    sub_seed = None
    back_candidates = real_tokens
    if len(real_tokens) > backward_cap:
        sub_seed = seed
        picker = np.random.default_rng(nm._stream_seed(seed, "bleu-backward"))
        idx = picker.choice(len(real_tokens), size=backward_cap, replace=False)
        back_candidates = [real_tokens[i] for i in sorted(idx)]
        subsampled = True

    bleu_f = {n: bleu_corpus(gen_tokens, real_tokens, n) for n in bleu_orders}
    bleu_b = {n: bleu_corpus(back_candidates, gen_tokens, n) for n in bleu_orders}
    bleu_ha = {n: bleu_harmonic(bleu_f[n], bleu_b[n]) for n in bleu_orders}

    return MetricsReport(
        category_accuracy=acc,
        perplexity=ppl,
        bleu_f=bleu_f,
        bleu_b=bleu_b,
        bleu_ha=bleu_ha,
        n_samples_per_category=n_samples,
        num_categories=cfg.num_categories if cfg else corpus.num_categories,
        seed=seed,
        backward_subsampled=subsampled,
        backward_subsample_seed=sub_seed,
        classifier_val_accuracy=clf.val_accuracy if clf is not None else None,
        config=cfg.to_dict() if cfg else {},
    )
