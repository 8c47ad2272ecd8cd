"""Command-line entry points: build-data, train, generate, evaluate, grad-check.

Option precedence is flags > config file > defaults; the resolved sources are
printed at startup. Exit codes: 0 success, 1 usage/configuration error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, NumericError
from .numeric import Rng, check_gradient, mean as nm_mean
from .model import (
    CatVrnnParams,
    ModelConfig,
    forward_teacher,
    generate,
    joint_loss,
    parameter_count,
)
from .data import (
    Vocabulary,
    build_icq_variant,
    build_ica_series,
    build_vocabulary,
    corpus_manifest,
    encode_batch,
    filter_by_length,
    load_corpus,
    make_synthetic_corpus,
    save_corpus,
    subsample_per_category,
    write_manifest,
)
from .training import (
    Checkpoint,
    TrainPlan,
    checkpoint_digest,
    load_checkpoint,
    run_training,
)
from .evaluation import EvalClassifier, eval_report, train_eval_classifier

log = logging.getLogger(__name__)


class UsageError(ConfigurationError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_scalar(text: str):
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            continue
    return low


def load_config_file(path) -> dict:
    """Flat key=value file; # starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        values[key.strip().replace("-", "_")] = _parse_scalar(value)
    return values


def resolve_options(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Merge flags > config file > defaults and print where each value came
    from."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    sources = {}
    for key, default in parser_defaults.items():
        flag_value = getattr(args, key, default)
        if flag_value != default:
            resolved[key], sources[key] = flag_value, "flag"
        elif key in file_values:
            resolved[key], sources[key] = file_values[key], "file"
        else:
            resolved[key], sources[key] = default, "default"
    unknown = set(file_values) - set(parser_defaults)
    if unknown:
        raise UsageError(f"unknown config file keys: {sorted(unknown)}")
    print("options (flags > file > defaults):")
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]} ({sources[key]})")
    return resolved


def _parser_defaults(parser: argparse.ArgumentParser) -> dict:
    skip = {"help", "config", "command"}
    return {
        a.dest: a.default
        for a in parser._actions
        if a.dest not in skip and a.default != argparse.SUPPRESS
    }


# --- build-data ---------------------------------------------------------------


def add_build_data_parser(sub):
    p = sub.add_parser("build-data", help="corpus filtering and dataset builders")
    p.add_argument("--config", default=None)
    p.add_argument("--input", default=None, help="input corpus TSV")
    p.add_argument("--output", required=True, help="output corpus TSV")
    p.add_argument("--manifest", default=None, help="manifest JSON path")
    p.add_argument("--variant", default=None,
                   help="icq-1c|icq-2c|icq-5c|icq-10c|ica-<K>c")
    p.add_argument("--filter-len", default=None, metavar="MIN:MAX")
    p.add_argument("--take-per-category", type=int, default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--categories", type=int, default=2)
    p.add_argument("--per-category", type=int, default=200)
    p.add_argument("--vocab-per-category", type=int, default=50)
    p.add_argument("--len-range", default="5:12", metavar="MIN:MAX")
    p.add_argument("--seed", type=int, default=0)
    return p


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise UsageError(f"expected MIN:MAX, got {text!r}")


def cmd_build_data(opts: dict) -> int:
    seed = opts["seed"]
    if opts["synthetic"]:
        corpus = make_synthetic_corpus(
            opts["categories"], opts["per_category"], opts["vocab_per_category"],
            _parse_range(opts["len_range"]), seed,
        )
    elif opts["input"]:
        corpus = load_corpus(opts["input"])
    else:
        raise UsageError("build-data needs --input or --synthetic")

    if opts["filter_len"]:
        lo, hi = _parse_range(opts["filter_len"])
        corpus = filter_by_length(corpus, lo, hi)
    if opts["take_per_category"]:
        corpus = subsample_per_category(corpus, opts["take_per_category"], seed)
    variant = (opts["variant"] or "").lower()
    if variant.startswith("icq-"):
        corpus = build_icq_variant(corpus, variant)
    elif variant.startswith("ica-"):
        try:
            k = int(variant[len("ica-"):].rstrip("c"))
        except ValueError:
            raise UsageError(f"bad ica variant {variant!r}")
        corpus = build_ica_series(corpus, k)
    elif variant:
        raise UsageError(f"unknown variant {variant!r}")

    header = {"seed": seed, "config": {k: v for k, v in opts.items() if v is not None}}
    save_corpus(opts["output"], corpus, header=header)
    manifest = corpus_manifest(corpus, seed=seed, extra={"config": header["config"]})
    manifest_path = opts["manifest"] or (str(opts["output"]) + ".manifest.json")
    write_manifest(manifest_path, manifest)
    print(f"wrote {len(corpus)} sentences to {opts['output']}")
    print(f"manifest: {manifest_path}")
    return 0


# --- train ----------------------------------------------------------------------


def add_train_parser(sub):
    p = sub.add_parser("train", help="train a model on a corpus TSV")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--init", default="static", choices=["none", "static", "adaptive"])
    p.add_argument("--omega", type=float, default=8.5)
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--use-kl", action="store_true")
    p.add_argument("--feature-extractors", action="store_true")
    p.add_argument("--no-classification", action="store_true")
    p.add_argument("--mask-pad-loss", action="store_true")
    p.add_argument("--precision", default="float64", choices=["float64", "float32"])
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--save-every", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=0)
    return p


def _model_config_from(opts: dict, vocab_size: int, num_categories: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        num_categories=num_categories,
        embed_dim=opts["embed_dim"],
        hidden_dim=opts["hidden_dim"],
        latent_dim=opts["latent_dim"],
        max_len=opts["max_len"],
        init_mode=opts["init"],
        static_omega=opts["omega"],
        use_kl_term=opts["use_kl"],
        use_feature_extractors=opts["feature_extractors"],
        use_classification=not opts["no_classification"],
        mask_pad_loss=opts["mask_pad_loss"],
        temperature=opts["temperature"],
        dtype=opts["precision"],
    )


def cmd_train(opts: dict) -> int:
    corpus = load_corpus(opts["corpus"])
    if corpus.max_length() > opts["max_len"]:
        raise DataError(
            f"corpus has sentences up to {corpus.max_length()} tokens; "
            f"raise --max-len {opts['max_len']}"
        )
    vocab = build_vocabulary(corpus, min_freq=opts["min_freq"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")

    rng = Rng(opts["seed"])
    plan = TrainPlan(epochs=opts["epochs"], batch_size=opts["batch_size"],
                     lr=opts["lr"], grad_clip=opts["grad_clip"])
    start_epoch = 0
    adam = None
    if opts["resume"]:
        ckpt = load_checkpoint(opts["resume"])
        if ckpt.vocab_digest != vocab.digest():
            raise DataError("checkpoint vocabulary digest does not match corpus")
        cfg = ckpt.config
        params = ckpt.build_params()
        adam = ckpt.build_adam(params.store)
        if ckpt.rng_state is not None:
            rng.set_state(ckpt.rng_state)
        start_epoch = ckpt.epoch
        print(f"resuming from epoch {start_epoch}")
    else:
        cfg = _model_config_from(opts, len(vocab), corpus.num_categories)
        params = CatVrnnParams(cfg, rng)
    print(f"model parameters: {parameter_count(params)}")

    batch = encode_batch(corpus.sentences, vocab, cfg.max_len)
    config_echo = {"seed": opts["seed"], "plan": plan.to_dict(),
                   "model": cfg.to_dict(), "corpus": str(opts["corpus"])}
    (out_dir / "run_config.json").write_text(
        json.dumps(config_echo, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    def report(stats):
        print(f"epoch {stats.epoch}: gen={stats.mean_gen_nll:.4f} "
              f"cls={stats.mean_cls_nll:.4f} kl={stats.mean_kl:.4f}")

    run_training(batch.inputs, batch.targets, batch.categories, params, cfg,
                 plan, rng, vocab.digest(), start_epoch=start_epoch, adam=adam,
                 checkpoint_dir=out_dir, save_every=opts["save_every"],
                 metrics_path=out_dir / "metrics.jsonl", on_epoch=report)
    final = out_dir / f"epoch_{plan.epochs:04d}.ckpt"
    print(f"final checkpoint: {final}")
    print(f"checkpoint digest: {checkpoint_digest(final)}")
    return 0


# --- generate --------------------------------------------------------------------


def add_generate_parser(sub):
    p = sub.add_parser("generate", help="sample category text from a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None, help="vocab.txt saved by train")
    p.add_argument("--corpus", default=None, help="corpus TSV to rebuild the vocab")
    p.add_argument("--out", required=True, help="generated TSV path")
    p.add_argument("-n", "--samples", type=int, default=100)
    p.add_argument("-c", "--categories", default=None,
                   help="comma-separated ids; default all")
    p.add_argument("--temperature", type=float, default=None,
                   help="override the checkpoint's sampling temperature")
    p.add_argument("--seed", type=int, default=0)
    return p


def _vocab_for(ckpt: Checkpoint, opts: dict) -> Vocabulary:
    if opts.get("vocab"):
        vocab = Vocabulary.load(opts["vocab"])
    elif opts.get("corpus"):
        vocab = build_vocabulary(load_corpus(opts["corpus"]))
    else:
        raise UsageError("need --vocab or --corpus to map token ids")
    if vocab.digest() != ckpt.vocab_digest:
        raise DataError("vocabulary digest does not match the checkpoint")
    return vocab


def cmd_generate(opts: dict) -> int:
    ckpt = load_checkpoint(opts["checkpoint"])
    vocab = _vocab_for(ckpt, opts)
    cfg = ckpt.config
    if opts.get("temperature") is not None:
        cfg = ModelConfig.from_dict(
            {**cfg.to_dict(), "temperature": opts["temperature"]})
    params = ckpt.build_params()
    if opts["categories"]:
        cats = [int(c) for c in str(opts["categories"]).split(",")]
    else:
        cats = list(range(cfg.num_categories))
    for c in cats:
        if not 0 <= c < cfg.num_categories:
            raise ConfigurationError(
                f"category {c} out of range [0, {cfg.num_categories})"
            )
    rng = Rng(opts["seed"])
    sentences = []
    dropped = 0
    for c in cats:
        for ids in generate(c, opts["samples"], params, cfg, rng):
            if ids:
                sentences.append((c, [vocab.decode_id(i) for i in ids]))
            else:
                dropped += 1
    if dropped:
        # the exchange format cannot hold empty sentences
        print(f"dropped {dropped} empty generation(s)")
    header = {"seed": opts["seed"], "config": cfg.to_dict(),
              "checkpoint": str(opts["checkpoint"]), "samples": opts["samples"]}
    lines = [f"# {k}={json.dumps(v) if isinstance(v, dict) else v}"
             for k, v in header.items()]
    lines += [f"{c}\t{' '.join(tokens)}" for c, tokens in sentences]
    Path(opts["out"]).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(sentences)} sentences to {opts['out']}")
    return 0


# --- evaluate --------------------------------------------------------------------


def add_evaluate_parser(sub):
    p = sub.add_parser("evaluate", help="compute the metric report")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", required=True, help="real corpus TSV")
    p.add_argument("--vocab", default=None)
    p.add_argument("--generated", default=None,
                   help="score an existing generated TSV instead of sampling")
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--classifier", default=None, help="saved classifier file")
    p.add_argument("--save-classifier", default=None)
    p.add_argument("--classifier-epochs", type=int, default=25)
    p.add_argument("--bleu-cap", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    return p


def cmd_evaluate(opts: dict) -> int:
    corpus = load_corpus(opts["corpus"])
    params = cfg = None
    vocab = None
    if opts["checkpoint"]:
        ckpt = load_checkpoint(opts["checkpoint"])
        vocab = _vocab_for(ckpt, {"vocab": opts.get("vocab"),
                                  "corpus": opts["corpus"]})
        cfg = ckpt.config
        params = ckpt.build_params()
    elif not opts["generated"]:
        raise UsageError("evaluate needs --checkpoint or --generated")
    if vocab is None:
        vocab = build_vocabulary(corpus)

    generated = None
    if opts["generated"]:
        gen_corpus = load_corpus(opts["generated"],
                                 num_categories=corpus.num_categories)
        generated = [(list(s.tokens), s.category) for s in gen_corpus.sentences]

    if opts["classifier"]:
        clf = EvalClassifier.load(opts["classifier"])
    else:
        clf = train_eval_classifier(corpus, seed=opts["seed"],
                                    epochs=opts["classifier_epochs"])
        if opts["save_classifier"]:
            clf.save(opts["save_classifier"])

    report = eval_report(params, cfg, corpus, vocab, clf,
                         n_samples=opts["samples"], seed=opts["seed"],
                         backward_cap=opts["bleu_cap"], generated=generated)
    report.config = dict(report.config)
    report.config["command_options"] = {
        k: v for k, v in opts.items() if isinstance(v, (int, float, str, bool))
    }
    text = report.to_json()
    if opts["out"]:
        Path(opts["out"]).write_text(text + "\n", encoding="utf-8")
        print(f"report written to {opts['out']}")
    print(text)
    return 0


# --- grad-check --------------------------------------------------------------------


def add_grad_check_parser(sub):
    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--config", default=None)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-checks", type=int, default=256)
    p.add_argument("--corrupt-backward", action="store_true",
                   help="negative control: perturb analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    return p


def _primitive_suite(seed: int):
    """Scalar losses exercising each differentiable primitive in isolation."""
    from .numeric import (GaussianParams, GruWeights, ParamStore, Tensor,
                          gru_cell, kl_gaussians, mlp_forward, reparameterize,
                          softmax, softplus, tensor_sum, cross_entropy_rows)

    rng = np.random.default_rng(seed)
    suite = []

    def case(name):
        def register(builder):
            suite.append((name, builder))
            return builder
        return register

    @case("mlp_forward")
    def _mlp():
        store = ParamStore()
        w1 = store.add("w1", rng.normal(size=(4, 3)))
        b1 = store.add("b1", rng.normal(size=3))
        w2 = store.add("w2", rng.normal(size=(3, 2)))
        b2 = store.add("b2", rng.normal(size=2))
        x = Tensor(rng.normal(size=(3, 4)))
        return store, lambda: nm_mean(
            mlp_forward(x, [(w1, b1), (w2, b2)], ["relu", "softplus"]))

    @case("softmax")
    def _softmax():
        store = ParamStore()
        v = store.add("logits", rng.normal(size=(2, 5)))
        w = Tensor(rng.normal(size=(2, 5)))
        return store, lambda: tensor_sum(softmax(v) * w)

    @case("gru_cell")
    def _gru():
        store = ParamStore()
        names = ("xr", "hr", "br", "xu", "hu", "bu", "xn", "hn", "bn")
        shapes = {"x": (4, 3), "h": (3, 3), "b": 3}
        tensors = {n: store.add(n, rng.normal(size=shapes[n[0]]) * 0.5)
                   for n in names}
        ws = GruWeights(w_xr=tensors["xr"], w_hr=tensors["hr"], b_r=tensors["br"],
                        w_xu=tensors["xu"], w_hu=tensors["hu"], b_u=tensors["bu"],
                        w_xn=tensors["xn"], w_hn=tensors["hn"], b_n=tensors["bn"])
        x = Tensor(rng.normal(size=(2, 4)))
        h = Tensor(rng.normal(size=(2, 3)))
        return store, lambda: nm_mean(gru_cell(x, h, ws))

    @case("reparameterize")
    def _reparam():
        store = ParamStore()
        mu = store.add("mu", rng.normal(size=(2, 4)))
        raw = store.add("sigma_raw", rng.normal(size=(2, 4)))
        def loss():
            z = reparameterize(GaussianParams(mu, softplus(raw) + 1e-6),
                               Rng(seed).stream("latent"))
            return tensor_sum(z * z)
        return store, loss

    @case("cross_entropy")
    def _ce():
        store = ParamStore()
        logits = store.add("logits", rng.normal(size=(3, 6)))
        targets = np.array([1, 4, 0])
        return store, lambda: nm_mean(cross_entropy_rows(logits, targets))

    @case("kl_gaussians")
    def _kl():
        store = ParamStore()
        mq = store.add("mu_q", rng.normal(size=(2, 3)))
        sq = store.add("sq_raw", rng.normal(size=(2, 3)))
        mp = store.add("mu_p", rng.normal(size=(2, 3)))
        sp = store.add("sp_raw", rng.normal(size=(2, 3)))
        def loss():
            q = GaussianParams(mq, softplus(sq) + 1e-6)
            p = GaussianParams(mp, softplus(sp) + 1e-6)
            return tensor_sum(kl_gaussians(q, p))
        return store, loss

    return suite


def cmd_grad_check(opts: dict) -> int:
    corrupt = opts["corrupt_backward"]
    tol = opts["tolerance"]
    seed = opts["seed"]
    worst = 0.0
    ok = True

    print("primitive gradients (worst relative error each):")
    for name, builder in _primitive_suite(seed):
        store, loss_fn = builder()
        report = check_gradient(loss_fn, store, tolerance=tol,
                                max_checks=opts["max_checks"], corrupt=corrupt)
        worst = max(worst, report.max_rel_err)
        ok = ok and report.passed
        print(f"  {name}: {report.summary()}")

    def tiny_cfg(**kw):
        base = dict(vocab_size=12, num_categories=2, embed_dim=8, hidden_dim=6,
                    latent_dim=4, max_len=5, init_mode="static")
        base.update(kw)
        return ModelConfig(**base)

    x_ids = np.array([[0, 3, 7, 2, 5], [0, 4, 4, 9, 0]])
    targets = np.array([[3, 7, 2, 5, 11], [4, 4, 9, 0, 0]])
    cats = np.array([0, 1])

    variants = [
        ("static", tiny_cfg()),
        ("adaptive", tiny_cfg(init_mode="adaptive")),
        ("static+kl", tiny_cfg(use_kl_term=True)),
        ("adaptive+kl", tiny_cfg(init_mode="adaptive", use_kl_term=True)),
        ("feature-extractors", tiny_cfg(use_feature_extractors=True)),
    ]
    print("full-model joint loss:")
    for name, cfg in variants:
        params = CatVrnnParams(cfg, Rng(seed))

        def loss_fn(cfg=cfg, params=params):
            fwd = forward_teacher(x_ids, cats, params, cfg, Rng(seed + 1),
                                  train_mode=True)
            return nm_mean(joint_loss(fwd, targets, cats, cfg).total)

        report = check_gradient(loss_fn, params.store, tolerance=tol,
                                max_checks=opts["max_checks"], corrupt=corrupt)
        worst = max(worst, report.max_rel_err)
        ok = ok and report.passed
        print(f"  {name}: {report.summary()}")
        for entry in sorted(report.per_param, key=lambda e: -e.max_rel_err)[:3]:
            print(f"      {entry.name}: {entry.max_rel_err:.3e} "
                  f"({entry.checked} checked)")
    print(f"overall: {'PASS' if ok else 'FAIL'} (worst {worst:.3e}, tol {tol:.1e})")
    return 0 if ok else 3


# --- entry point ----------------------------------------------------------------------


COMMANDS = {
    "build-data": cmd_build_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "grad-check": cmd_grad_check,
}


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="catvrnn",
                            description="category-steered variational RNN toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    add_build_data_parser(sub)
    add_train_parser(sub)
    add_generate_parser(sub)
    add_evaluate_parser(sub)
    add_grad_check_parser(sub)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = next(
        p for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        for name, p in a.choices.items() if name == args.command
    )
    opts = resolve_options(args, _parser_defaults(sub))
    return COMMANDS[args.command](opts)


def main(argv=None) -> int:
    try:
        code = run(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        code = 1
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        code = 1
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        code = 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        code = 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        code = 3
    if code:
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
