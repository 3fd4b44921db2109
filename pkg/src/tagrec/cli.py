"""Operator command line: the pipeline from raw dump to benchmark report.

Settings resolve as built-in defaults, then a JSON config file, then
explicit flags. The effective configuration is echoed into each command's
output directory, so a run can always be reproduced from its artifacts.
Logs are JSON lines on stderr; artifacts never contain wall-clock data, so
reruns with identical inputs and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .encoder import EncoderConfig
from .eval import (
    build_eval_instances,
    cliffs_delta,
    evaluate_corpus,
    latency_bench,
    missed_tag_analysis,
    wilcoxon_signed_rank,
    write_json,
)
from .ingest import (
    DecomposedPost,
    ParseStats,
    chronological_split,
    decompose_all,
    parse_dump,
    read_corpus,
    write_corpus,
)
from .model import (
    COMPONENT_ORDER,
    ModelConfig,
    TripletModel,
    encode_post,
    load_checkpoint,
    predict_top_k,
    save_checkpoint,
)
from .tokenizer import Tokenizer, train_tokenizer
from .train import TrainConfig, build_dataset, train
from .vocab import TagVocabulary, build_tag_vocab, filter_posts

log = logging.getLogger("tagrec")


class ArtifactError(ValueError):
    """An input artifact is missing or fails validation."""


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "event": record.getMessage(),
        }
        return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def _setup_logging(quiet: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(logging.ERROR if quiet else logging.INFO)


INGEST_DEFAULTS = {"dump": None, "out_dir": None, "workers": 1}
BUILD_VOCAB_DEFAULTS = {"corpus": None, "out_dir": None, "theta": 50}
TOKENIZER_TRAIN_DEFAULTS = {"corpus": None, "out_dir": None, "vocab_size": 8192}
TRAIN_DEFAULTS = {
    "corpus": None,
    "vocab": None,
    "tokenizer": None,
    "out_dir": None,
    "components": "title,description,code",
    "share_weights": False,
    "pooling": "mean",
    "layers": 2,
    "heads": 4,
    "model_dim": 128,
    "ffn_dim": 512,
    "title_len": 100,
    "description_len": 512,
    "code_len": 512,
    "truncation": "head_only",
    "dropout": 0.0,
    "batch_size": 64,
    "lr": 7e-5,
    "epochs": 1,
    "seed": 0,
    "weight_decay": 0.0,
    "warmup_steps": 0,
    "max_grad_norm": 0.0,
    "test_count": 0,
}
EVALUATE_DEFAULTS = {
    "corpus": None,
    "checkpoint": None,
    "vocab": None,
    "tokenizer": None,
    "out_dir": None,
    "ks": "1,2,3,4,5",
}
PREDICT_DEFAULTS = {
    "checkpoint": None,
    "vocab": None,
    "tokenizer": None,
    "post_json": None,
    "title": "",
    "description": "",
    "code": "",
    "k": 5,
}
ABLATE_DEFAULTS = {k: v for k, v in TRAIN_DEFAULTS.items() if k != "test_count"} | {
    "test_corpus": None
}
BENCH_DEFAULTS = {
    "checkpoint": None,
    "vocab": None,
    "tokenizer": None,
    "corpus": None,
    "out_dir": None,
    "sample_n": 2000,
    "repeats": 5,
    "seed": 0,
}
COMPARE_DEFAULTS = {"a": None, "b": None, "column": "f1@5", "out": None}


def _merge_options(args: argparse.Namespace, defaults: dict) -> dict:
    """Built-in defaults < config file < explicitly passed flags."""
    effective = dict(defaults)
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ArtifactError(f"config file not found: {path}")
        try:
            overrides = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ArtifactError("config file must contain a JSON object")
        unknown = sorted(set(overrides) - set(defaults))
        if unknown:
            raise ArtifactError(f"config file has unknown settings for this command: {unknown}")
        effective.update(overrides)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            effective[key] = value
    return effective


def _require(options: dict, *keys: str) -> None:
    missing = [k for k in keys if options.get(k) in (None, "")]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ArtifactError(f"missing required settings: {flags}")


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ArtifactError(f"{what} not found: {p}")
    return p


def _out_dir(options: dict) -> Path:
    out = Path(options["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_run_config(command: str, options: dict, out: Path) -> None:
    payload = {
        "command": command,
        "package_version": __version__,
        "options": {k: options[k] for k in sorted(options)},
    }
    write_json(payload, out / "run_config.json")


def _load_vocab(path: str | Path) -> TagVocabulary:
    return TagVocabulary.from_json(_require_file(path, "vocabulary").read_text(encoding="utf-8"))


def _load_tokenizer(path: str | Path) -> Tokenizer:
    return Tokenizer.from_json(_require_file(path, "tokenizer").read_text(encoding="utf-8"))


def _load_corpus(path: str | Path) -> list:
    return read_corpus(_require_file(path, "corpus"))


def _parse_components(raw: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in raw.split(",") if p.strip())
    if not parts:
        raise ArtifactError(f"no components in {raw!r}")
    unknown = [p for p in parts if p not in COMPONENT_ORDER]
    if unknown:
        raise ArtifactError(f"unknown components {unknown}, expected among {COMPONENT_ORDER}")
    return parts


def _parse_ks(raw: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ArtifactError(f"cannot parse ks from {raw!r}") from exc
    if not ks:
        raise ArtifactError(f"no ks in {raw!r}")
    return ks


def _model_config(options: dict, tok: Tokenizer, num_tags: int) -> ModelConfig:
    components = _parse_components(options["components"])
    lengths = {
        "title": options["title_len"],
        "description": options["description_len"],
        "code": options["code_len"],
    }
    encoders = {
        c: EncoderConfig(
            vocab_size=tok.vocab_size,
            layers=options["layers"],
            heads=options["heads"],
            model_dim=options["model_dim"],
            ffn_dim=options["ffn_dim"],
            max_positions=lengths[c],
            dropout_rate=options["dropout"],
            pooling=options["pooling"],
        )
        for c in components
    }
    return ModelConfig(
        components=components,
        encoders=encoders,
        num_tags=num_tags,
        share_weights=bool(options["share_weights"]),
        truncation=options["truncation"],
    )


def _train_config(options: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=options["batch_size"],
        initial_lr=options["lr"],
        epochs=options["epochs"],
        seed=options["seed"],
        weight_decay=options["weight_decay"],
        warmup_steps=options["warmup_steps"],
        max_grad_norm=options["max_grad_norm"] or None,
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    options = _merge_options(args, INGEST_DEFAULTS)
    _require(options, "dump", "out_dir")
    dump = _require_file(options["dump"], "dump")
    out = _out_dir(options)
    stats = ParseStats()
    raw_posts = list(parse_dump(dump, stats))
    posts = decompose_all(raw_posts, workers=int(options["workers"]))
    count = write_corpus(posts, out / "corpus.jsonl")
    write_json(stats.to_json_dict(), out / "ingest_stats.json")
    _echo_run_config("ingest", options, out)
    log.info("ingested %d posts from %d rows into %s", count, stats.rows_total, out)
    return 0


def cmd_build_vocab(args: argparse.Namespace) -> int:
    options = _merge_options(args, BUILD_VOCAB_DEFAULTS)
    _require(options, "corpus", "out_dir")
    posts = _load_corpus(options["corpus"])
    out = _out_dir(options)
    vocab = build_tag_vocab(posts, theta=int(options["theta"]))
    kept = filter_posts(posts, vocab)
    (out / "tag_vocab.json").write_text(vocab.to_json() + "\n", encoding="utf-8")
    write_corpus(kept, out / "corpus_filtered.jsonl")
    write_json(
        {
            "tags_kept": len(vocab),
            "posts_in": len(posts),
            "posts_kept": len(kept),
            "posts_dropped": len(posts) - len(kept),
        },
        out / "vocab_stats.json",
    )
    _echo_run_config("build-vocab", options, out)
    log.info("kept %d tags and %d of %d posts", len(vocab), len(kept), len(posts))
    return 0


def cmd_tokenizer_train(args: argparse.Namespace) -> int:
    options = _merge_options(args, TOKENIZER_TRAIN_DEFAULTS)
    _require(options, "corpus", "out_dir")
    posts = _load_corpus(options["corpus"])
    out = _out_dir(options)
    text = "\n".join(f"{p.title}\n{p.description}\n{p.code}" for p in posts)
    tok = train_tokenizer(text, vocab_size=int(options["vocab_size"]))
    (out / "tokenizer.json").write_text(tok.to_json() + "\n", encoding="utf-8")
    _echo_run_config("tokenizer-train", options, out)
    log.info("trained tokenizer with %d merges (vocab %d)", len(tok.merges), tok.vocab_size)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    options = _merge_options(args, TRAIN_DEFAULTS)
    _require(options, "corpus", "vocab", "tokenizer", "out_dir")
    posts = _load_corpus(options["corpus"])
    vocab = _load_vocab(options["vocab"])
    tok = _load_tokenizer(options["tokenizer"])
    out = _out_dir(options)

    test_count = int(options["test_count"])
    if test_count > 0:
        train_posts, test_posts = chronological_split(posts, test_count)
        write_corpus(test_posts, out / "test.jsonl")
        log.info("held out %d newest posts to %s", test_count, out / "test.jsonl")
    else:
        train_posts = posts

    train_posts = filter_posts(train_posts, vocab)
    if not train_posts:
        raise ArtifactError("no training posts left after vocabulary filtering")
    config = _model_config(options, tok, num_tags=len(vocab))
    model = TripletModel(config, vocab, seed=int(options["seed"]))
    dataset = build_dataset(train_posts, tok, config, vocab)
    trace = train(model, dataset, _train_config(options), trace_path=out / "loss_trace.csv")
    save_checkpoint(model, out / "model.ckpt")
    _echo_run_config("train", options, out)
    log.info("trained %d steps, final loss %.4f, checkpoint %s", len(trace), trace[-1][2], out / "model.ckpt")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    options = _merge_options(args, EVALUATE_DEFAULTS)
    _require(options, "corpus", "checkpoint", "vocab", "tokenizer", "out_dir")
    vocab = _load_vocab(options["vocab"])
    tok = _load_tokenizer(options["tokenizer"])
    model = load_checkpoint(_require_file(options["checkpoint"], "checkpoint"), vocab)
    posts = filter_posts(_load_corpus(options["corpus"]), vocab)
    if not posts:
        raise ArtifactError("no evaluable posts after vocabulary filtering")
    out = _out_dir(options)
    ks = _parse_ks(options["ks"])
    instances = build_eval_instances(model, tok, posts, top_n=max(ks))
    report = evaluate_corpus(instances, ks=ks)
    write_json(report.to_json_dict(), out / "metrics.json")
    report.write_per_instance_csv(out / "per_instance.csv")
    if 5 in ks:
        missed = missed_tag_analysis(instances, [row["f1@5"] for row in report.per_instance])
        write_json({"missed_tags": [{"tag": t, "count": c} for t, c in missed]}, out / "missed_tags.json")
    _echo_run_config("evaluate", options, out)
    print(report.format_table())
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    options = _merge_options(args, PREDICT_DEFAULTS)
    _require(options, "checkpoint", "vocab", "tokenizer")
    vocab = _load_vocab(options["vocab"])
    tok = _load_tokenizer(options["tokenizer"])
    model = load_checkpoint(_require_file(options["checkpoint"], "checkpoint"), vocab)
    if options["post_json"]:
        raw = json.loads(_require_file(options["post_json"], "post file").read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ArtifactError("post file must contain a JSON object")
        title = raw.get("title", "")
        description = raw.get("description", "")
        code = raw.get("code", "")
    else:
        title, description, code = options["title"], options["description"], options["code"]
    post = DecomposedPost(id=0, creation_date="1970-01-01T00:00:00", title=title, description=description, code=code, tags=("unused",))
    pred = model.predict(encode_post(post, tok, model.config))
    names = predict_top_k(pred, int(options["k"]))
    ranked = {name: float(pred.probabilities[pred.tags.index(name)]) for name in names}
    print(json.dumps({"tags": [{"tag": n, "probability": ranked[n]} for n in names]}, indent=2))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    options = _merge_options(args, ABLATE_DEFAULTS)
    _require(options, "corpus", "test_corpus", "vocab", "tokenizer", "out_dir")
    vocab = _load_vocab(options["vocab"])
    tok = _load_tokenizer(options["tokenizer"])
    train_posts = filter_posts(_load_corpus(options["corpus"]), vocab)
    test_posts = filter_posts(_load_corpus(options["test_corpus"]), vocab)
    if not train_posts or not test_posts:
        raise ArtifactError("train or test corpus empty after vocabulary filtering")
    out = _out_dir(options)
    components = _parse_components(options["components"])
    if len(components) < 2:
        raise ArtifactError("ablation needs at least two components")

    def run_variant(variant_components: tuple[str, ...]) -> dict:
        variant_options = options | {"components": ",".join(variant_components)}
        config = _model_config(variant_options, tok, num_tags=len(vocab))
        model = TripletModel(config, vocab, seed=int(options["seed"]))
        dataset = build_dataset(train_posts, tok, config, vocab)
        train(model, dataset, _train_config(options))
        instances = build_eval_instances(model, tok, test_posts, top_n=5)
        return evaluate_corpus(instances).to_json_dict()

    results = {"full": run_variant(components)}
    for excluded in components:
        remaining = tuple(c for c in components if c != excluded)
        results[f"no_{excluded}"] = run_variant(remaining)

    deltas = {}
    for variant, metrics in results.items():
        if variant == "full":
            continue
        deltas[variant] = {
            k: metrics["f1"][k] - results["full"]["f1"][k] for k in results["full"]["f1"]
        }
    payload = {"variants": results, "f1_delta_vs_full": deltas}
    write_json(payload, out / "ablation.json")
    _echo_run_config("ablate", options, out)
    ks = sorted(results["full"]["f1"], key=int)
    print("variant        " + "".join(f"{'dF1@' + k:>10}" for k in ks))
    for variant, d in deltas.items():
        print(f"{variant:<15}" + "".join(f"{d[k]:>10.4f}" for k in ks))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    options = _merge_options(args, BENCH_DEFAULTS)
    _require(options, "checkpoint", "vocab", "tokenizer", "corpus", "out_dir")
    vocab = _load_vocab(options["vocab"])
    tok = _load_tokenizer(options["tokenizer"])
    model = load_checkpoint(_require_file(options["checkpoint"], "checkpoint"), vocab)
    posts = _load_corpus(options["corpus"])
    out = _out_dir(options)
    stats = latency_bench(
        model,
        tok,
        posts,
        sample_n=int(options["sample_n"]),
        repeats=int(options["repeats"]),
        seed=int(options["seed"]),
    )
    write_json(stats.to_json_dict(), out / "latency.json")
    _echo_run_config("bench", options, out)
    print(json.dumps(stats.to_json_dict(), indent=2))
    return 0


def _read_metric_column(path: str | Path, column: str) -> list[float]:
    with open(_require_file(path, "per-instance CSV"), "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ArtifactError(f"{path}: no column {column!r} (have {reader.fieldnames})")
        try:
            return [float(row[column]) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ArtifactError(f"{path}: non-numeric value in column {column!r}") from exc


def cmd_compare(args: argparse.Namespace) -> int:
    options = _merge_options(args, COMPARE_DEFAULTS)
    _require(options, "a", "b")
    column = options["column"]
    a = _read_metric_column(options["a"], column)
    b = _read_metric_column(options["b"], column)
    if len(a) != len(b):
        raise ArtifactError(f"paired CSVs differ in length: {len(a)} vs {len(b)}")
    p_value = wilcoxon_signed_rank(a, b)
    effect = cliffs_delta(a, b)
    payload = {
        "column": column,
        "n": len(a),
        "wilcoxon_p": p_value,
        "cliffs_delta": effect.delta,
        "magnitude": effect.magnitude,
    }
    if options["out"]:
        write_json(payload, options["out"])
    print(json.dumps(payload, indent=2))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON file with settings for this command (flags win)")
    parser.add_argument("--quiet", action="store_true", help="only log errors")


def _add_train_flags(parser: argparse.ArgumentParser, include_test_count: bool) -> None:
    parser.add_argument("--corpus", default=None, help="training corpus JSONL (default: required)")
    parser.add_argument("--vocab", default=None, help="tag vocabulary JSON (default: required)")
    parser.add_argument("--tokenizer", default=None, help="tokenizer JSON (default: required)")
    parser.add_argument("--out-dir", default=None, help="output directory (default: required)")
    parser.add_argument("--components", default=None, help="comma list among title,description,code (default: all three)")
    parser.add_argument("--share-weights", action=argparse.BooleanOptionalAction, default=None, help="one encoder shared by all components (default: off)")
    parser.add_argument("--pooling", default=None, choices=["mean", "cls_first", "max"], help="sequence pooling (default: mean)")
    parser.add_argument("--layers", type=int, default=None, help="encoder layers (default: 2)")
    parser.add_argument("--heads", type=int, default=None, help="attention heads (default: 4)")
    parser.add_argument("--model-dim", type=int, default=None, help="model width (default: 128)")
    parser.add_argument("--ffn-dim", type=int, default=None, help="feed-forward width (default: 512)")
    parser.add_argument("--title-len", type=int, default=None, help="title sequence length (default: 100)")
    parser.add_argument("--description-len", type=int, default=None, help="description sequence length (default: 512)")
    parser.add_argument("--code-len", type=int, default=None, help="code sequence length (default: 512)")
    parser.add_argument("--truncation", default=None, choices=["head_only", "tail_only"], help="overflow handling (default: head_only)")
    parser.add_argument("--dropout", type=float, default=None, help="dropout rate (default: 0.0)")
    parser.add_argument("--batch-size", type=int, default=None, help="posts per step (default: 64)")
    parser.add_argument("--lr", type=float, default=None, help="initial learning rate (default: 7e-5)")
    parser.add_argument("--epochs", type=int, default=None, help="passes over the data (default: 1)")
    parser.add_argument("--seed", type=int, default=None, help="seed for init, shuffling, dropout (default: 0)")
    parser.add_argument("--weight-decay", type=float, default=None, help="decoupled weight decay (default: 0.0)")
    parser.add_argument("--warmup-steps", type=int, default=None, help="linear warmup steps (default: 0)")
    parser.add_argument("--max-grad-norm", type=float, default=None, help="global gradient norm cap, 0 disables (default: 0)")
    if include_test_count:
        parser.add_argument("--test-count", type=int, default=None, help="newest posts held out to test.jsonl (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tagrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a Posts.xml dump into a JSONL corpus")
    _add_common(p)
    p.add_argument("--dump", default=None, help="Posts.xml path (default: required)")
    p.add_argument("--out-dir", default=None, help="output directory (default: required)")
    p.add_argument("--workers", type=int, default=None, help="decomposition processes (default: 1)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-vocab", help="build the tag vocabulary and filter the corpus")
    _add_common(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL (default: required)")
    p.add_argument("--out-dir", default=None, help="output directory (default: required)")
    p.add_argument("--theta", type=int, default=None, help="rare-tag threshold: keep count >= theta (default: 50)")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("tokenizer-train", help="train the byte-level BPE tokenizer")
    _add_common(p)
    p.add_argument("--corpus", default=None, help="corpus JSONL (default: required)")
    p.add_argument("--out-dir", default=None, help="output directory (default: required)")
    p.add_argument("--vocab-size", type=int, default=None, help="target vocabulary size (default: 8192)")
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    _add_train_flags(p, include_test_count=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test corpus")
    _add_common(p)
    p.add_argument("--corpus", default=None, help="test corpus JSONL (default: required)")
    p.add_argument("--checkpoint", default=None, help="model checkpoint (default: required)")
    p.add_argument("--vocab", default=None, help="tag vocabulary JSON (default: required)")
    p.add_argument("--tokenizer", default=None, help="tokenizer JSON (default: required)")
    p.add_argument("--out-dir", default=None, help="output directory (default: required)")
    p.add_argument("--ks", default=None, help="comma list of cutoffs (default: 1,2,3,4,5)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="recommend tags for one post")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="model checkpoint (default: required)")
    p.add_argument("--vocab", default=None, help="tag vocabulary JSON (default: required)")
    p.add_argument("--tokenizer", default=None, help="tokenizer JSON (default: required)")
    p.add_argument("--post-json", default=None, help="JSON file with title/description/code")
    p.add_argument("--title", default=None, help="post title (default: empty)")
    p.add_argument("--description", default=None, help="post description (default: empty)")
    p.add_argument("--code", default=None, help="post code (default: empty)")
    p.add_argument("--k", type=int, default=None, help="number of tags to recommend (default: 5)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and score leave-one-component-out variants")
    _add_common(p)
    _add_train_flags(p, include_test_count=False)
    p.add_argument("--test-corpus", default=None, help="held-out corpus JSONL (default: required)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="measure single-post prediction latency")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="model checkpoint (default: required)")
    p.add_argument("--vocab", default=None, help="tag vocabulary JSON (default: required)")
    p.add_argument("--tokenizer", default=None, help="tokenizer JSON (default: required)")
    p.add_argument("--corpus", default=None, help="corpus to sample posts from (default: required)")
    p.add_argument("--out-dir", default=None, help="output directory (default: required)")
    p.add_argument("--sample-n", type=int, default=None, help="posts sampled with replacement (default: 2000)")
    p.add_argument("--repeats", type=int, default=None, help="timing passes over the sample (default: 5)")
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: 0)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="paired significance test between two per-instance CSVs")
    _add_common(p)
    p.add_argument("--a", default=None, help="first per-instance CSV (default: required)")
    p.add_argument("--b", default=None, help="second per-instance CSV (default: required)")
    p.add_argument("--column", default=None, help="metric column to compare (default: f1@5)")
    p.add_argument("--out", default=None, help="also write the result JSON here")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(getattr(args, "quiet", False))
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        # Bad inputs or artifacts (every validation error subclasses ValueError).
        _emit_error(exc)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        _emit_error(exc)
        return 1


def _emit_error(exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(payload, separators=(",", ":"), ensure_ascii=False), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
