"""Command-line entry point: ``bartkit <subcommand> --out DIR [options]``.

Every run writes its outputs and one ``manifest.json`` into ``--out``. The
manifest records the fully resolved configuration, so passing it back through
``--config`` replays the run. Plain config files use ``key = value`` lines.
Precedence is command-line flag, then config file, then built-in default.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable

from . import __version__

log = logging.getLogger("bartkit")

MANIFEST = "manifest.json"
_NOT_CONFIG = {"out", "config", "command"}


class UsageError(Exception):
    pass


# -- registry ---------------------------------------------------------------


class Command:
    def __init__(self, name: str, help: str, setup: Callable, run: Callable, required=(), paths=()):
        self.name, self.help, self.setup, self.run = name, help, setup, run
        self.required = tuple(required)
        self.paths = tuple(paths)


COMMANDS: dict[str, Command] = {}


def command(name: str, help: str, setup: Callable, required=(), paths=()):
    def register(fn):
        COMMANDS[name] = Command(name, help, setup, fn, required, paths)
        return fn
    return register


# -- shared option groups -----------------------------------------------------


def _model_options(p):
    g = p.add_argument_group("model")
    g.add_argument("--enc-layers", type=int, default=2)
    g.add_argument("--dec-layers", type=int, default=2)
    g.add_argument("--hidden-dim", type=int, default=64)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--ffn-dim", type=int, default=0, help="0 means 4 * hidden-dim")
    g.add_argument("--activation", choices=["gelu", "relu"], default="gelu")
    g.add_argument("--no-top-layernorm", dest="top_layernorm", action="store_false")
    g.add_argument("--max-positions", type=int, default=256)
    g.add_argument("--embedding-tying", choices=["all", "decoder", "none"], default="all")


def _train_options(p, epochs=20):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=epochs)
    g.add_argument("--peak-lr", type=float, default=6e-4)
    g.add_argument("--warmup-fraction", type=float, default=0.06)
    g.add_argument("--adam-eps", type=float, default=1e-6)
    g.add_argument("--batch-tokens", type=int, default=2048)
    g.add_argument("--clip-norm", type=float, default=0.0, help="0 disables clipping")


def _model_config(args, vocab_size: int):
    from .model.config import ModelConfig

    return ModelConfig(
        vocab_size=vocab_size, enc_layers=args.enc_layers, dec_layers=args.dec_layers,
        hidden_dim=args.hidden_dim, heads=args.heads, ffn_dim=args.ffn_dim, activation=args.activation,
        top_layernorm=args.top_layernorm, max_positions=args.max_positions,
        embedding_tying=args.embedding_tying,
    )


def _train_config(args):
    from .model.config import TrainConfig

    return TrainConfig(peak_lr=args.peak_lr, warmup_fraction=args.warmup_fraction, adam_eps=args.adam_eps,
                       epochs=args.epochs, batch_tokens=args.batch_tokens, clip_norm=args.clip_norm,
                       seed=args.seed)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def _read_jsonl_or_lines(path) -> list[dict]:
    """JSON objects per line; a line that is not a JSON object becomes ``{"text": line}``."""
    out = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.rstrip("\n")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                obj = None
            if not isinstance(obj, dict):
                obj = {"text": line}
            obj.setdefault("id", str(i))
            out.append(obj)
    return out


def _text_of(obj: dict) -> str:
    for key in ("text", "summary", "hypothesis", "document"):
        if isinstance(obj.get(key), str):
            return obj[key]
    raise ValueError(f"record {obj.get('id')!r} has no text field")


def _write_jsonl(rows, path: Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
            n += 1
    return n


def _frame(ids, limit: int) -> tuple[int, ...]:
    from .subword import BOS, EOS

    return (BOS, *tuple(ids)[: max(1, limit - 2)], EOS)


def _smoothed_summary(curve) -> dict:
    from .model.train import smoothed

    losses = [r.loss for r in curve]
    s = smoothed(losses, 20)
    return {"steps": len(curve), "first_smoothed_loss": float(s[min(19, len(s) - 1)]),
            "last_smoothed_loss": float(s[-1]), "final_loss": losses[-1]}


# -- corpus / vocabulary ------------------------------------------------------


def _clean_setup(p):
    p.add_argument("--input", help="raw corpus: JSON-lines with 'text' or blank-line separated text")
    p.add_argument("--min-chars", type=int, default=1)
    p.add_argument("--no-strip-control", dest="strip_control", action="store_false")
    p.add_argument("--no-normalize-whitespace", dest="normalize_whitespace", action="store_false")
    p.add_argument("--unicode-form", choices=["NFC", "none"], default="NFC")


@command("clean", "clean raw text into document records", _clean_setup, required=["input"], paths=["input"])
def run_clean(args, out: Path) -> dict:
    from .corpus import CleaningRules, CleanStats, clean_corpus, read_raw_records, write_documents

    rules = CleaningRules(args.min_chars, args.strip_control, args.normalize_whitespace, args.unicode_form)
    stats = CleanStats()
    n = write_documents(clean_corpus(read_raw_records(args.input), rules, stats), out / "documents.jsonl")
    _dump(stats.to_json(), out / "clean_stats.json")
    return {"documents": n}


def _vocab_setup(p):
    p.add_argument("--input", help="documents JSON-lines")
    p.add_argument("--vocab-size", type=int, default=50000)
    p.add_argument("--coverage", type=float, default=0.9995)
    p.add_argument("--sample-fraction", type=float, default=1.0)


@command("train-vocab", "train a BPE subword vocabulary", _vocab_setup, required=["input"], paths=["input"])
def run_train_vocab(args, out: Path) -> dict:
    from .corpus import read_documents
    from .subword import sample_documents, train_bpe

    docs = sample_documents(read_documents(args.input), args.sample_fraction, args.seed)
    vocab = train_bpe(docs, args.vocab_size, args.coverage)
    vocab.save(out / "vocab.tsv")
    report = {"size": len(vocab), "merges": len(vocab.merges), "coverage": vocab.coverage,
              "alphabet": len(vocab.alphabet), "documents": len(docs), "vocab_id": vocab.vocab_id}
    _dump(report, out / "vocab_report.json")
    return report


def _encode_setup(p):
    p.add_argument("--input", help="documents JSON-lines")
    p.add_argument("--vocab")


@command("encode", "encode documents into token ids", _encode_setup, required=["input", "vocab"],
         paths=["input", "vocab"])
def run_encode(args, out: Path) -> dict:
    from .corpus import read_documents
    from .subword import SubwordVocab

    vocab = SubwordVocab.load(args.vocab)
    rows = ({"id": d.id, "ids": list(vocab.encode(d.text).ids)} for d in read_documents(args.input))
    return {"documents": _write_jsonl(rows, out / "tokens.jsonl")}


def _noise_setup(p):
    p.add_argument("--input", help="documents JSON-lines")
    p.add_argument("--vocab")
    p.add_argument("--poisson-lambda", type=float, default=3.5)
    p.add_argument("--mask-ratio", type=float, default=0.3)
    p.add_argument("--no-permute", dest="permute_sentences", action="store_false")
    p.add_argument("--max-length", type=int, default=512)


@command("noise", "corrupt documents into (source, target) training pairs", _noise_setup,
         required=["input", "vocab"], paths=["input", "vocab"])
def run_noise(args, out: Path) -> dict:
    from .corpus import read_documents
    from .noising import NoiseConfig, noise_corpus, write_pairs
    from .subword import SubwordVocab

    vocab = SubwordVocab.load(args.vocab)
    cfg = NoiseConfig(args.poisson_lambda, args.mask_ratio, args.permute_sentences, args.seed, args.max_length)
    stats = {"pairs": 0, "target_tokens": 0, "masked_tokens": 0, "spans": 0, "untruncated_tokens": 0,
             "untruncated_spans": 0}

    def counted(pairs):
        for p in pairs:
            stats["pairs"] += 1
            stats["target_tokens"] += len(p.target) - 2
            stats["masked_tokens"] += sum(s.length for s in p.mask_spans)
            stats["spans"] += len(p.mask_spans)
            whole = [s.length for s in p.mask_spans if not s.truncated]
            stats["untruncated_tokens"] += sum(whole)
            stats["untruncated_spans"] += len(whole)
            yield p

    write_pairs(counted(noise_corpus(read_documents(args.input), vocab, cfg)), out / "pairs.jsonl")
    stats["masked_fraction"] = stats["masked_tokens"] / max(1, stats["target_tokens"])
    stats["mean_span_length"] = stats["masked_tokens"] / max(1, stats["spans"])
    stats["mean_untruncated_span_length"] = stats["untruncated_tokens"] / max(1, stats["untruncated_spans"])
    _dump(stats, out / "noise_report.json")
    return stats


# -- model training -----------------------------------------------------------


def _pretrain_setup(p):
    p.add_argument("--input", help="noised pairs JSON-lines (from `noise`)")
    p.add_argument("--vocab")
    _model_options(p)
    _train_options(p)


@command("pretrain", "denoising pretraining", _pretrain_setup, required=["input", "vocab"],
         paths=["input", "vocab"])
def run_pretrain(args, out: Path) -> dict:
    from .model.train import save_checkpoint, train, write_loss_curve
    from .noising import read_pairs
    from .subword import SubwordVocab

    vocab = SubwordVocab.load(args.vocab)
    pairs = list(read_pairs(args.input, vocab.vocab_id))
    params, curve = train(pairs, _model_config(args, len(vocab)), _train_config(args))
    save_checkpoint(params, out / "checkpoint", metadata={"vocab_id": vocab.vocab_id})
    write_loss_curve(curve, out / "loss_curve.csv")
    summary = _smoothed_summary(curve)
    _dump(summary, out / "train_report.json")
    return summary


def _load_or_init(args, vocab):
    from .model.train import load_checkpoint
    from .model.transformer import init_model

    if args.checkpoint:
        params, _, _ = load_checkpoint(args.checkpoint)
        if params.config.vocab_size != len(vocab):
            raise UsageError(f"checkpoint vocab size {params.config.vocab_size} != vocabulary size {len(vocab)}")
        return params
    return init_model(_model_config(args, len(vocab)), args.seed)


def _finetune_sum_setup(p):
    p.add_argument("--data", help="dataset directory ({train,valid,test}.{source,target})")
    p.add_argument("--split", default="train")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint", help="pretrained checkpoint directory (omit to train from scratch)")
    p.add_argument("--max-target", type=int, default=64)
    _model_options(p)
    _train_options(p, epochs=5)


@command("finetune-sum", "fine-tune for summarization", _finetune_sum_setup, required=["data", "vocab"],
         paths=["data", "vocab", "checkpoint"])
def run_finetune_sum(args, out: Path) -> dict:
    from .model.train import save_checkpoint, train, write_loss_curve
    from .noising import NoisedPair
    from .orangesum import load_split
    from .subword import SubwordVocab, TokenSequence

    vocab = SubwordVocab.load(args.vocab)
    init = _load_or_init(args, vocab)
    limit = init.config.max_positions
    pairs = [
        NoisedPair(p.id, TokenSequence(_frame(vocab.encode(p.document).ids, limit), vocab.vocab_id),
                   TokenSequence(_frame(vocab.encode(p.summary).ids, min(limit, args.max_target)), vocab.vocab_id),
                   ())
        for p in load_split(args.data, args.split)
    ]
    params, curve = train(pairs, init.config, _train_config(args), init=init)
    save_checkpoint(params, out / "checkpoint", metadata={"vocab_id": vocab.vocab_id, "task": "summarization"})
    write_loss_curve(curve, out / "loss_curve.csv")
    summary = _smoothed_summary(curve)
    _dump(summary, out / "train_report.json")
    return summary


def _finetune_cls_setup(p):
    p.add_argument("--train", help="JSON-lines with 'text', optional 'text_b', integer 'label'")
    p.add_argument("--eval", help="held-out JSON-lines in the same format")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--num-classes", type=int, default=0, help="0 infers from the training labels")
    _model_options(p)
    _train_options(p, epochs=10)


def _cls_examples(path, vocab):
    from .model.classify import join_inputs

    out = []
    for r in _read_jsonl_or_lines(path):
        b = vocab.encode(r["text_b"]) if r.get("text_b") is not None else None
        out.append((join_inputs(vocab.encode(r["text"]), b), int(r["label"])))
    return out


@command("finetune-cls", "fine-tune a sequence classifier", _finetune_cls_setup, required=["train", "vocab"],
         paths=["train", "eval", "vocab", "checkpoint"])
def run_finetune_cls(args, out: Path) -> dict:
    import numpy as np

    from .model.classify import ClassificationHead, finetune_classifier, predict
    from .model.train import save_checkpoint, write_loss_curve
    from .subword import SubwordVocab

    vocab = SubwordVocab.load(args.vocab)
    init = _load_or_init(args, vocab)
    train_ex = _cls_examples(args.train, vocab)
    n_cls = args.num_classes or (max(y for _, y in train_ex) + 1)
    head = ClassificationHead.init(init.config.hidden_dim, n_cls, args.seed)
    params, head, curve = finetune_classifier(init, head, train_ex, _train_config(args))
    save_checkpoint(params, out / "checkpoint", extra=head.tensors,
                    metadata={"vocab_id": vocab.vocab_id, "task": "classification", "num_classes": n_cls})
    write_loss_curve(curve, out / "loss_curve.csv")
    report = _smoothed_summary(curve)
    if args.eval:
        ev = _cls_examples(args.eval, vocab)
        pred = predict(params, head, [s for s, _ in ev])
        report["eval_accuracy"] = float(np.mean(pred == np.array([y for _, y in ev])))
        report["eval_examples"] = len(ev)
    _dump(report, out / "train_report.json")
    return report


# -- generation and evaluation ------------------------------------------------


def _generate_setup(p):
    p.add_argument("--input", help="JSON-lines with 'id' and 'text' (or 'document')")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--length-penalty", type=float, default=1.0)


@command("generate", "beam-search generation", _generate_setup, required=["input", "vocab", "checkpoint"],
         paths=["input", "vocab", "checkpoint"])
def run_generate(args, out: Path) -> dict:
    from .generate import BeamConfig, beam_search
    from .model.train import load_checkpoint
    from .subword import EOS, SubwordVocab

    vocab = SubwordVocab.load(args.vocab)
    params, _, _ = load_checkpoint(args.checkpoint)
    cfg = BeamConfig(args.beam, args.max_len, args.length_penalty)
    limit = params.config.max_positions
    unfinished = 0

    def rows():
        nonlocal unfinished
        for r in _read_jsonl_or_lines(args.input):
            h = beam_search(params, _frame(vocab.encode(_text_of(r)).ids, limit), cfg)
            unfinished += not h.finished
            ids = [i for i in h.ids if i != EOS]
            yield {"id": r["id"], "text": vocab.decode(ids), "ids": list(h.ids), "score": h.score,
                   "log_prob": h.log_prob, "finished": h.finished}

    n = _write_jsonl(rows(), out / "hypotheses.jsonl")
    return {"hypotheses": n, "unfinished": unfinished}


def _evaluate_setup(p):
    p.add_argument("--candidates", help="JSON-lines (or plain lines) of candidate summaries")
    p.add_argument("--references", help="JSON-lines (or plain lines) of reference summaries")
    p.add_argument("--data", help="dataset directory, for --baseline")
    p.add_argument("--split", default="test")
    p.add_argument("--baseline", choices=["lead", "ext-oracle"], help="score an extractive baseline on --data")
    p.add_argument("--lead-n", type=int, default=1)


@command("evaluate", "ROUGE-1/2/L report", _evaluate_setup, paths=["candidates", "references", "data"])
def run_evaluate(args, out: Path) -> dict:
    from .corpus import split_sentences
    from .metrics import evaluate_corpus, ext_oracle, lead_baseline
    from .orangesum import load_split

    if args.baseline:
        if not args.data:
            raise UsageError("--baseline needs --data")
        pairs = load_split(args.data, args.split)
        cands = []
        for p in pairs:
            sents = split_sentences(p.document) or [p.document]
            cands.append(lead_baseline(sents, args.lead_n) if args.baseline == "lead" else ext_oracle(sents, p.summary))
        ids, refs = [p.id for p in pairs], [p.summary for p in pairs]
        _write_jsonl(({"id": i, "text": c} for i, c in zip(ids, cands)), out / "candidates.jsonl")
    else:
        if not (args.candidates and args.references):
            raise UsageError("evaluate needs --candidates and --references, or --baseline with --data")
        c_rows, r_rows = _read_jsonl_or_lines(args.candidates), _read_jsonl_or_lines(args.references)
        by_id = {r["id"]: r for r in r_rows}
        if len(by_id) == len(r_rows) and all(r["id"] in by_id for r in c_rows) and len(c_rows) == len(r_rows):
            r_rows = [by_id[r["id"]] for r in c_rows]
        ids = [r["id"] for r in c_rows]
        cands, refs = [_text_of(r) for r in c_rows], [_text_of(r) for r in r_rows]
    report = evaluate_corpus(cands, refs, ids)
    _dump(report, out / "report.json")
    return {v: m["f1"] for v, m in report["mean"].items()}


# -- datasets -------------------------------------------------------------------


def _build_setup(p):
    p.add_argument("--input", help="article records JSON-lines (title, abstract, body, category, date)")
    p.add_argument("--task", choices=["title", "abstract"], default="abstract")
    p.add_argument("--threshold", type=float, default=0.57, help="max novel-unigram fraction (abstract task)")
    p.add_argument("--filter-quantile", type=float, default=None,
                   help="drop this top fraction by novel unigrams instead of using --threshold")
    p.add_argument("--n-test", type=int, default=1500)
    p.add_argument("--n-val", type=int, default=1500)


@command("build-orangesum", "filter and split article records", _build_setup, required=["input"],
         paths=["input"])
def run_build(args, out: Path) -> dict:
    from .orangesum import build_dataset, read_articles, write_dataset

    ds = build_dataset(read_articles(args.input), args.task, args.threshold, args.seed, args.filter_quantile,
                       args.n_test, args.n_val)
    write_dataset(ds, out)
    return {"sizes": ds.sizes(), "dropped": dict(ds.dropped), "threshold": ds.threshold}


def _stats_setup(p):
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--task", choices=["title", "abstract"], default="abstract")


@command("stats", "dataset statistics and abstractivity", _stats_setup, required=["data"], paths=["data"])
def run_stats(args, out: Path) -> dict:
    from .orangesum import abstractivity_table, dataset_stats, load_dataset

    ds = load_dataset(args.data, args.task)
    report = dataset_stats(ds).to_json()
    report["abstractivity"] = abstractivity_table(ds).to_json()
    report["task"] = args.task
    _dump(report, out / "stats.json")
    return {"sizes": report["sizes"]}


# -- model utilities ------------------------------------------------------------


def _grad_setup(p):
    p.add_argument("--vocab-size", type=int, default=40)
    p.add_argument("--src-len", type=int, default=9)
    p.add_argument("--tgt-len", type=int, default=7)
    p.add_argument("--n-coords", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    _model_options(p)
    p.set_defaults(hidden_dim=16, heads=2, enc_layers=1, dec_layers=1, max_positions=32)


@command("grad-check", "finite-difference gradient check", _grad_setup)
def run_grad_check(args, out: Path) -> dict:
    import numpy as np

    from .model.transformer import grad_check, init_model
    from .noising import NoisedPair
    from .subword import NUM_SPECIALS, TokenSequence

    cfg = _model_config(args, args.vocab_size)
    params = init_model(cfg, args.seed, dtype=np.float64)
    rng = np.random.default_rng([args.seed, 7])
    src = rng.integers(NUM_SPECIALS, cfg.vocab_size, args.src_len)
    tgt = rng.integers(NUM_SPECIALS, cfg.vocab_size, args.tgt_len)
    pair = NoisedPair("grad-check", TokenSequence(_frame(src, len(src) + 2)), TokenSequence(_frame(tgt, len(tgt) + 2)), ())
    report = grad_check(params, pair, args.n_coords, args.seed)
    result = report.to_json()
    result["passed"] = report.passed(args.tolerance)
    _dump(result, out / "grad_check.json")
    if not result["passed"]:
        raise RuntimeError(f"gradient check failed: max relative error {report.max_rel_error:.3g}")
    return {"max_rel_error": report.max_rel_error}


def _prune_setup(p):
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--keep", help="file with one token id per line")
    p.add_argument("--corpus", help="documents JSON-lines; keep the ids their encoding uses")


@command("prune-vocab", "drop unused vocabulary rows from a checkpoint", _prune_setup,
         required=["checkpoint", "vocab"], paths=["checkpoint", "vocab", "keep", "corpus"])
def run_prune(args, out: Path) -> dict:
    from .corpus import read_documents
    from .model.config import param_count
    from .model.prune import expected_reduction, prune_embeddings, prune_vocab
    from .model.train import load_checkpoint, save_checkpoint
    from .subword import NUM_SPECIALS, SubwordVocab

    if bool(args.keep) == bool(args.corpus):
        raise UsageError("give exactly one of --keep or --corpus")
    vocab = SubwordVocab.load(args.vocab)
    params, extra, meta = load_checkpoint(args.checkpoint)
    keep = set(range(NUM_SPECIALS))
    if args.keep:
        keep.update(int(x) for x in Path(args.keep).read_text().split())
    else:
        for d in read_documents(args.corpus):
            keep.update(vocab.encode(d.text).ids)
    new_params, remap = prune_embeddings(params, keep)
    new_vocab = prune_vocab(vocab, keep)
    save_checkpoint(new_params, out / "checkpoint", extra, {**meta, "vocab_id": new_vocab.vocab_id})
    new_vocab.save(out / "vocab.tsv")
    _write_jsonl(({"old": o, "new": n} for o, n in sorted(remap.items())), out / "id_map.jsonl")
    before, after = param_count(params.config), param_count(new_params.config)
    report = {"vocab_before": len(vocab), "vocab_after": len(new_vocab), "params_before": before,
              "params_after": after,
              "expected_reduction": expected_reduction(params.config, len(vocab) - len(new_vocab))}
    _dump(report, out / "prune_report.json")
    return report


# -- plumbing -------------------------------------------------------------------


def _common_options(p):
    p.add_argument("--out", help="output directory (required)")
    p.add_argument("--config", help="key = value file, or a previous run's manifest.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0, help="cap numeric worker threads (0 = library default)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="bartkit", description="Desk-scale BART-style pretraining toolkit.")
    parser.add_argument("--version", action="version", version=f"bartkit {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs.required = True
    subparsers = {}
    for cmd in COMMANDS.values():
        sp = subs.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        cmd.setup(sp)
        _common_options(sp)
        subparsers[cmd.name] = sp
    return parser, subparsers


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def load_config(path: str, sub: argparse.ArgumentParser, name: str) -> dict:
    """Read a config file into typed defaults for ``sub``."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        obj = json.loads(text)
        if "subcommand" in obj and obj["subcommand"] != name:
            raise UsageError(f"{path} is a manifest for {obj['subcommand']!r}, not {name!r}")
        raw = obj.get("config", obj)
    else:
        raw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    actions = {a.dest: a for a in sub._actions}
    values = {}
    for key, v in raw.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest in _NOT_CONFIG:
            continue
        a = actions.get(dest)
        if a is None:
            raise UsageError(f"{path}: unknown key {key!r} for {name}")
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            v = _parse_bool(v)
        elif isinstance(v, str) and a.type is not None:
            v = None if v in ("", "None", "null") else a.type(v)
        values[dest] = v
    return values


def parse_args(argv: list[str]):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    sub = subparsers[args.command]
    cmd = COMMANDS[args.command]
    if args.config:
        try:
            sub.set_defaults(**load_config(args.config, sub, args.command))
        except (OSError, ValueError, UsageError) as e:
            sub.error(str(e))
        args = parser.parse_args(argv)
    if not args.out:
        sub.error("--out is required")
    for dest in cmd.required:
        if getattr(args, dest) in (None, ""):
            sub.error(f"--{dest.replace('_', '-')} is required")
    for dest in cmd.paths:
        v = getattr(args, dest)
        if v:
            if not Path(v).exists():
                sub.error(f"--{dest.replace('_', '-')}: {v} does not exist")
            setattr(args, dest, str(Path(v).resolve()))
    return args, sub


def _file_digests(out: Path) -> dict[str, str]:
    digests = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            digests[str(p.relative_to(out))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return digests


def _apply_threads(n: int) -> None:
    # effective only before numpy first loads its BLAS
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, sub = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    _apply_threads(args.threads)
    cmd = COMMANDS[args.command]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    start = time.time()
    status, code, summary, error = "ok", 0, {}, None
    try:
        summary = cmd.run(args, out) or {}
    except UsageError as e:
        status, code, error = "usage_error", 2, {"type": "UsageError", "message": str(e)}
    except Exception as e:  # surfaced as a structured error, exit 1
        log.debug("run failed", exc_info=True)
        status, code, error = "error", 1, {"type": type(e).__name__, "message": str(e)}
    manifest = {
        "subcommand": args.command,
        "status": status,
        "config": config,
        "inputs": {d: getattr(args, d) for d in cmd.paths if getattr(args, d)},
        "outputs": _file_digests(out),
        "seed": args.seed,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(start)),
        "wall_clock_seconds": round(time.time() - start, 3),
        "summary": summary,
    }
    if error:
        manifest["error"] = error
        print(json.dumps({"error": error}), file=sys.stderr)
    _dump(manifest, out / MANIFEST)
    return code


if __name__ == "__main__":
    sys.exit(main())
