"""Command-line entry point: ``emocog <command> [flags]``.

Commands::

    gen-data          synthetic dataset + manifest
    pretrain-decoder  caption language model used (frozen) by stage 2
    train --stage N   stage 1 (contrastive) or stage 2 (caption CE)
    decode            greedy captions for a split
    eval captions|embeddings|stats
    gradcheck         finite-difference suite

Exit codes: 0 ok, 1 check failed, 2 configuration error, 3 I/O or format
error, 4 numerical divergence.

Every command accepts ``--config FILE`` with flat ``key = value`` lines
named after the long flags; explicit flags win over the file, and unknown
keys are rejected before any work starts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .bridgenet import MODALITIES, BridgeParams, ModelDims, bridge_forward_batch, init_bridge
from .checkpoint import assign_params, load_params, save_params
from .config import read_config
from .data import (DEFAULT_PROMPT, TEMPLATES, SyntheticConfig, Vocab, generate_synthetic, label_rates,
                   load_features, save_dataset, write_matrix)
from .decoder import (DecoderDims, caption_targets, greedy_decode_batch, init_decoder, init_prefix_bridge,
                      token_accuracy)
from .errors import ConfigError, ContractError, DimensionError, DivergenceError, FormatError, NumericalError, \
    ParameterError
from .gradcheck import CHECKS, DEFAULT_H, DEFAULT_TOL, run_suite
from .metrics import GroupLabelTable, caption_report, embedding_separability, group_proportions, \
    jaccard_similarity_correlation, read_lines
from .trainer import GROUPS, PRESETS, STAGE_GROUPS, Model, TrainConfig, group_digest, pretrain_decoder, preset, \
    train_stage1, train_stage2

log = logging.getLogger("emocog")

REPORT_SCHEMA = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    """argparse failure, re-raised so main() controls the exit code."""


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# flag groups


def _int_pair(text: str) -> tuple[int, int]:
    lo, hi = (int(x) for x in text.split(","))
    return lo, hi


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = tuple(int(x) for x in text.split(","))
    if len(parts) != 3:
        raise ValueError("need three comma-separated integers")
    return parts


def _float_triple(text: str) -> tuple[float, float, float]:
    parts = tuple(float(x) for x in text.split(","))
    if len(parts) != 3:
        raise ValueError("need three comma-separated numbers")
    return parts


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _add_common(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None if seed_required else 0,
                   help="master seed" + (" (required)" if seed_required else ""))


def _add_model_dims(p: argparse.ArgumentParser) -> None:
    d = ModelDims()
    p.add_argument("--n-queries", type=int, default=d.n_queries)
    p.add_argument("--d-q", type=int, default=d.d_q)
    p.add_argument("--d-k", type=int, default=d.d_k)
    p.add_argument("--d-v", type=int, default=d.d_v)
    p.add_argument("--d-e", type=int, default=d.d_e)
    p.add_argument("--d-c", type=int, default=d.d_c)


def _add_decoder_dims(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--max-len", type=int, default=24)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emocog", description="Emotion/cognition bridge training pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_common(g, seed_required=True)
    cfg = SyntheticConfig()
    g.add_argument("--n", type=int, default=cfg.n_samples, help="number of utterances")
    g.add_argument("--noise-std", type=float, default=cfg.noise_std)
    g.add_argument("--neg-rate", type=float, default=cfg.neg_rate)
    g.add_argument("--cognition-rates", type=_float_list, default=cfg.cognition_rates,
                   help="orientation,attention,memory,language")
    g.add_argument("--prior-scale", type=float, default=cfg.prior_scale)
    g.add_argument("--template", choices=TEMPLATES, default=cfg.template)
    g.add_argument("--split", type=_int_triple, default=None, help="train,val,test sizes")
    g.add_argument("--modality-gain", type=_float_triple, default=cfg.modality_gain, help="video,audio,text")
    for m in MODALITIES:
        g.add_argument(f"--t-{m}", type=_int_pair, default=getattr(cfg, f"t_{m}"), help="min,max length")
        g.add_argument(f"--d-{m}", type=int, default=getattr(cfg, f"d_{m}"))
    g.add_argument("--format", choices=("ecmf", "csv"), default="ecmf", help="matrix file format")

    p = sub.add_parser("pretrain-decoder", help="fit the caption decoder on the caption corpus")
    _add_common(p, seed_required=True)
    p.add_argument("--data", help="dataset directory or manifest")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--d-e", type=int, default=ModelDims.d_e)
    p.add_argument("--d-c", type=int, default=ModelDims.d_c)
    _add_decoder_dims(p)

    t = sub.add_parser("train", help="run one training stage")
    _add_common(t, seed_required=True)
    t.add_argument("--stage", type=int, choices=(1, 2))
    t.add_argument("--data", help="dataset directory or manifest")
    t.add_argument("--split", default="train")
    t.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--shuffle", type=_bool, default=True)
    t.add_argument("--modalities", default="vat", help="subset of v, a, t")
    t.add_argument("--init", help="checkpoint to start from (required for stage 2)")
    t.add_argument("--decoder", help="pretrained decoder checkpoint (required for stage 2)")
    _add_model_dims(t)

    d = sub.add_parser("decode", help="greedy captions for one split")
    _add_common(d)
    d.add_argument("--data")
    d.add_argument("--split", default="test")
    d.add_argument("--checkpoint", help="stage-2 checkpoint")
    d.add_argument("--decoder", help="decoder checkpoint")
    d.add_argument("--modalities", default="vat")
    d.add_argument("--max-tokens", type=int, default=20)

    e = sub.add_parser("eval", help="evaluation reports")
    esub = e.add_subparsers(dest="what", required=True, parser_class=_Parser)
    ec = esub.add_parser("captions", help="BLEU / ROUGE-L / CIDEr")
    _add_common(ec)
    ec.add_argument("--cand", help="candidate captions, one per line")
    ec.add_argument("--ref", help="reference captions, one per line")
    ee = esub.add_parser("embeddings", help="separability and Jaccard correlation")
    _add_common(ee)
    ee.add_argument("--checkpoint")
    ee.add_argument("--data")
    ee.add_argument("--split", default="test")
    ee.add_argument("--modalities", default="vat")
    ee.add_argument("--format", choices=("ecmf", "csv"), default=None, help="also write the embedding matrices")
    es = esub.add_parser("stats", help="per-group label proportions")
    _add_common(es)
    es.add_argument("--table", help="group label table (JSON)")

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(c)
    c.add_argument("--tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--h", type=float, default=DEFAULT_H)
    c.add_argument("--only", action="append", choices=sorted(CHECKS), help="run just this check (repeatable)")
    return parser


# ---------------------------------------------------------------------------
# run configuration: defaults < config file < explicit flags


def _leaf_parser(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    """The sub-parser that handles this command line."""
    current = parser
    args = list(argv)
    while True:
        subs = [a for a in current._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs:
            return current
        choice = next((a for a in args if a in subs[0].choices), None)
        if choice is None:
            return current
        args = args[args.index(choice) + 1:]
        current = subs[0].choices[choice]


def resolve_run_config(argv: Sequence[str], parser: argparse.ArgumentParser | None = None) -> argparse.Namespace:
    """Parse flags, then fill anything not given on the command line from ``--config``."""
    parser = parser or build_parser()
    ns = parser.parse_args(argv)
    leaf = _leaf_parser(parser, argv)
    actions = {a.dest: a for a in leaf._actions if a.option_strings and a.dest not in ("help", "config")}
    explicit = set()
    given = [a for a in argv if a.startswith("--")]
    for dest, action in actions.items():
        if any(g.split("=", 1)[0] in action.option_strings for g in given):
            explicit.add(dest)
    if getattr(ns, "config", None):
        try:
            values = read_config(ns.config)
        except OSError as exc:
            raise FormatError(ns.config, f"cannot read config: {exc.strerror}") from None
        for key, raw in values.items():
            if key not in actions:
                raise ConfigError(key, f"unknown configuration key for '{leaf.prog}'")
            if key in explicit:
                continue
            action = actions[key]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = _bool(raw)
                elif isinstance(action, argparse._AppendAction):
                    value = [v.strip() for v in raw.split(",") if v.strip()]
                else:
                    value = action.type(raw) if action.type else raw
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"invalid value {raw!r}: {exc}") from None
            if action.choices is not None:
                bad = [v for v in (value if isinstance(value, list) else [value]) if v not in action.choices]
                if bad:
                    raise ConfigError(key, f"{bad[0]!r} not in {sorted(action.choices)}")
            setattr(ns, key, value)
    return ns


def _require(ns, *names: str) -> None:
    for n in names:
        if getattr(ns, n, None) is None:
            raise ConfigError(n, f"--{n.replace('_', '-')} is required")


# ---------------------------------------------------------------------------
# output helpers


def _out_dir(ns) -> Path:
    _require(ns, "out")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(path: Path, report: dict) -> None:
    doc = {"schema": REPORT_SCHEMA, **report}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_loss_csv(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = list(history[0])
        writer.writerow(cols)
        for row in history:
            writer.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in cols])


def _load_dataset(ns):
    _require(ns, "data")
    return load_features(ns.data)


def _vocab_for(ns) -> Vocab:
    data = Path(ns.data)
    root = data if data.is_dir() else data.parent
    path = root / "vocab.txt"
    if not path.exists():
        raise FormatError(path, "vocabulary file not found next to the manifest")
    return Vocab.load(path)


def _split(dataset, name: str):
    if name == "all":
        return list(dataset.samples)
    samples = dataset.split(name)
    if not samples:
        raise ConfigError("split", f"split {name!r} is empty")
    return samples


# ---------------------------------------------------------------------------
# models from checkpoints


def _model_dims_from(values: dict[str, np.ndarray]) -> ModelDims:
    """Recover bridge dimensions from checkpoint shapes."""
    try:
        q = values["emotion.video.queries"]
        return ModelDims(n_queries=q.shape[0], d_q=q.shape[1], d_k=values["emotion.video.w_q"].shape[1],
                         d_v=values["emotion.video.w_v"].shape[1], d_e=values["emotion.fusion.w3"].shape[0],
                         d_c=values["cognition.fusion.w3"].shape[0],
                         **{f"d_{m}": values[f"emotion.{m}.w_m"].shape[0] for m in MODALITIES})
    except KeyError as exc:
        raise ConfigError("checkpoint", f"checkpoint lacks bridge section {exc.args[0]!r}") from None


def _decoder_dims_from(values: dict[str, np.ndarray]) -> DecoderDims:
    try:
        tok, pos, w1 = values["decoder.tok_emb"], values["decoder.pos_emb"], values["decoder.w1"]
    except KeyError as exc:
        raise ConfigError("decoder", f"decoder checkpoint lacks section {exc.args[0]!r}") from None
    return DecoderDims(vocab_size=tok.shape[0], d_model=tok.shape[1], d_ff=w1.shape[1], max_len=pos.shape[0])


def _load(path_flag: str, path) -> dict[str, np.ndarray]:
    if not Path(path).exists():
        raise FormatError(path, f"--{path_flag} file not found")
    return load_params(path)


def _assemble(dims: ModelDims, dec_values: dict | None, vocab_size: int, seed: int, d_model=32, d_ff=64,
              max_len=24) -> Model:
    bridge = init_bridge(dims, seed)
    if dec_values is not None:
        ddims = _decoder_dims_from(dec_values)
        if ddims.vocab_size != vocab_size:
            raise ConfigError("decoder", f"decoder vocabulary has {ddims.vocab_size} tokens, dataset has {vocab_size}")
    else:
        ddims = DecoderDims(vocab_size, d_model, d_ff, max_len)
    model = Model(bridge, init_prefix_bridge(dims.d_e, dims.d_c, ddims.d_model, seed), init_decoder(ddims, seed))
    if dec_values is not None:
        targets = {**model.groups()["decoder"], **model.groups()["prefix-bridges"]}
        assign_params(targets, {k: v for k, v in dec_values.items() if k in targets}, "decoder", strict=False)
        missing = [k for k in model.groups()["decoder"] if k not in dec_values]
        if missing:
            raise ConfigError("decoder", f"decoder checkpoint lacks {missing[0]!r}")
    return model


def _restore_bridge(model: Model, values: dict, path) -> None:
    targets = model.parameters(("bridgenet-emotion", "bridgenet-cognition", "prefix-bridges"))
    missing = [k for k in model.parameters(("bridgenet-emotion", "bridgenet-cognition")) if k not in values]
    if missing:
        raise ConfigError("init", f"checkpoint lacks {missing[0]!r}")
    assign_params(targets, {k: v for k, v in values.items() if k in targets}, path, strict=False)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(ns) -> int:
    _require(ns, "seed")
    cfg = SyntheticConfig(n_samples=ns.n, seed=ns.seed, noise_std=ns.noise_std, neg_rate=ns.neg_rate,
                          cognition_rates=tuple(ns.cognition_rates), prior_scale=ns.prior_scale,
                          t_video=ns.t_video, t_audio=ns.t_audio, t_text=ns.t_text, d_video=ns.d_video,
                          d_audio=ns.d_audio, d_text=ns.d_text, modality_gain=tuple(ns.modality_gain),
                          template=ns.template, split_sizes=ns.split)
    cfg.validate()
    out = _out_dir(ns)
    dataset = generate_synthetic(cfg)
    save_dataset(dataset, out, ns.format)
    summary = {"n": len(dataset), "label_rates": label_rates(dataset.samples), "splits": dataset.split_sizes(),
               "target_rates": {"negative": cfg.neg_rate, **dict(zip(
                   ("orientation", "attention", "memory", "language"), cfg.effective_cognition_rates()))}}
    write_report(out / "summary.json", summary)
    for name, rate in summary["label_rates"].items():
        print(f"{name:12s} {rate:.4f}  (target {summary['target_rates'][name]:.4f})")
    return EXIT_OK


def cmd_pretrain_decoder(ns) -> int:
    _require(ns, "seed")
    out = _out_dir(ns)
    dataset = _load_dataset(ns)
    vocab = _vocab_for(ns)
    captions = [s.caption for s in dataset.split("train")] or [s.caption for s in dataset.samples]
    model = _assemble(ModelDims(d_e=ns.d_e, d_c=ns.d_c, **dataset_feature_dims(dataset)), None, len(vocab), ns.seed,
                      ns.d_model, ns.d_ff, ns.max_len)
    if ns.batch_size < 2:
        raise ConfigError("batch_size", "must be >= 2")
    curve = pretrain_decoder(captions, vocab, model.decoder, model.prefix, DEFAULT_PROMPT, epochs=ns.epochs,
                             batch_size=ns.batch_size, lr=ns.lr, seed=ns.seed)
    save_params(out / "decoder.ecmb", model.parameters(("decoder", "prefix-bridges")))
    if curve:
        write_loss_csv(out / "loss.csv", [{"epoch": i + 1, "L_lm": v} for i, v in enumerate(curve)])
    write_report(out / "pretrain_report.json", {
        "epochs": ns.epochs, "seed": ns.seed, "vocab_size": len(vocab), "final_loss": curve[-1] if curve else None,
        "log_vocab": float(np.log(len(vocab))), "digest": group_digest(model.groups()["decoder"]),
    })
    return EXIT_OK


def dataset_feature_dims(dataset) -> dict[str, int]:
    return {f"d_{m}": dataset.feature_dims[m] for m in MODALITIES}


def _train_config(ns) -> TrainConfig:
    overrides = {k: getattr(ns, k) for k in ("epochs", "batch_size", "lr", "weight_decay", "tau")
                 if getattr(ns, k) is not None}
    cfg = preset(ns.preset, seed=ns.seed, shuffle=ns.shuffle, modalities=ns.modalities, **overrides)
    cfg.validate()
    return cfg


def cmd_train(ns) -> int:
    _require(ns, "stage", "seed", "data")
    cfg = _train_config(ns)
    if ns.stage == 2:
        if ns.init is None:
            raise ConfigError("init", "stage 2 needs a stage-1 checkpoint (--init)")
        if ns.decoder is None:
            raise ConfigError("decoder", "stage 2 needs a pretrained decoder checkpoint (--decoder)")
    out = _out_dir(ns)
    dataset = _load_dataset(ns)
    vocab = _vocab_for(ns)
    init_values = _load("init", ns.init) if ns.init else None
    dec_values = _load("decoder", ns.decoder) if ns.decoder else None
    if init_values is not None:
        dims = _model_dims_from(init_values)
        if {f"d_{m}": getattr(dims, f"d_{m}") for m in MODALITIES} != dataset_feature_dims(dataset):
            raise ConfigError("init", "checkpoint feature widths do not match the dataset")
    else:
        try:
            dims = ModelDims(n_queries=ns.n_queries, d_q=ns.d_q, d_k=ns.d_k, d_v=ns.d_v, d_e=ns.d_e, d_c=ns.d_c,
                             **dataset_feature_dims(dataset))
        except DimensionError as exc:
            raise ConfigError("dims", str(exc)) from None
    model = _assemble(dims, dec_values, len(vocab), ns.seed)
    if init_values is not None:
        _restore_bridge(model, init_values, ns.init)

    samples = _split(dataset, ns.split)
    before = {g: group_digest(p) for g, p in model.groups().items()}
    if ns.stage == 1:
        state = train_stage1(samples, model, cfg)
    else:
        state = train_stage2(samples, model, vocab, DEFAULT_PROMPT, cfg)
    after = {g: group_digest(p) for g, p in model.groups().items()}
    frozen = [g for g in GROUPS if g not in STAGE_GROUPS[ns.stage]]

    # only the groups this stage trains; stage 2 takes its prefix bridges from the decoder file
    save_params(out / "checkpoint.ecmb", model.parameters(STAGE_GROUPS[ns.stage]))
    write_loss_csv(out / "loss.csv", state.history)
    unchanged = all(before[g] == after[g] for g in frozen)
    write_report(out / "train_report.json", {
        "stage": ns.stage, "seed": ns.seed, "split": ns.split, "n_samples": len(samples),
        "config": {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr, "weight_decay": cfg.weight_decay,
                   "tau": cfg.tau, "modalities": cfg.modalities, "preset": ns.preset},
        "initial": state.history[0], "final": state.history[-1],
        "digests_before": before, "digests_after": after, "frozen_groups": frozen, "frozen_unchanged": unchanged,
    })
    last = state.history[-1]
    print(", ".join(f"{k}={v:.6g}" if k != "epoch" else f"epoch={v}" for k, v in last.items()))
    if not unchanged:
        log.error("frozen parameter groups changed during training")
        return EXIT_CHECK
    return EXIT_OK


def _bridge_from(values: dict, path) -> BridgeParams:
    bridge = init_bridge(_model_dims_from(values), 0)
    named = bridge.named_parameters()
    assign_params(named, {k: v for k, v in values.items() if k in named}, path, strict=False)
    return bridge


def _embed(ns, dataset, bridge):
    samples = _split(dataset, ns.split)
    try:
        mask = TrainConfig(modalities=ns.modalities).mask
    except ValueError as exc:
        raise ConfigError("modalities", str(exc)) from None
    with T.no_grad():
        h_e, h_c = bridge_forward_batch(samples, bridge, mask)
    return samples, h_e, h_c


def cmd_decode(ns) -> int:
    _require(ns, "checkpoint", "decoder", "data")
    out = _out_dir(ns)
    dataset = _load_dataset(ns)
    vocab = _vocab_for(ns)
    values = _load("checkpoint", ns.checkpoint)
    if "prefix.p_e" not in values:
        raise ConfigError("checkpoint", "decode needs a stage-2 checkpoint (no prefix bridges found)")
    dec_values = _load("decoder", ns.decoder)
    model = _assemble(_model_dims_from(values), dec_values, len(vocab), 0)
    _restore_bridge(model, values, ns.checkpoint)
    samples, h_e, h_c = _embed(ns, dataset, model.bridge)
    pred = greedy_decode_batch(h_e, h_c, vocab.encode(" ".join(DEFAULT_PROMPT)), model.decoder, model.prefix,
                               ns.max_tokens)
    gold = caption_targets([s.caption for s in samples], vocab)
    (out / "candidates.txt").write_text("".join(vocab.decode(p) + "\n" for p in pred), encoding="utf-8")
    (out / "references.txt").write_text("".join(s.caption + "\n" for s in samples), encoding="utf-8")
    write_report(out / "decode_report.json", {"split": ns.split, "n": len(samples),
                                              "token_accuracy": token_accuracy(pred, gold)})
    print(f"token accuracy {token_accuracy(pred, gold):.4f} on {len(samples)} {ns.split} samples")
    return EXIT_OK


def cmd_eval(ns) -> int:
    return {"captions": _eval_captions, "embeddings": _eval_embeddings, "stats": _eval_stats}[ns.what](ns)


def _read_text_lines(flag: str, path) -> list[str]:
    if path is None:
        raise ConfigError(flag, f"--{flag} is required")
    try:
        return read_lines(path)
    except OSError as exc:
        raise FormatError(path, f"cannot read --{flag}: {exc.strerror}") from None


def _eval_captions(ns) -> int:
    cands = _read_text_lines("cand", ns.cand)
    refs = _read_text_lines("ref", ns.ref)
    if len(cands) != len(refs):
        raise FormatError(ns.cand, f"{len(cands)} candidate lines vs {len(refs)} reference lines")
    report = caption_report(cands, refs)
    write_report(_out_dir(ns) / "captions_report.json", report)
    print(" ".join(f"{k}={v:.4f}" for k, v in report.items() if k != "n_pairs"))
    return EXIT_OK


def _eval_embeddings(ns) -> int:
    _require(ns, "checkpoint", "data")
    out = _out_dir(ns)
    dataset = _load_dataset(ns)
    samples, h_e, h_c = _embed(ns, dataset, _bridge_from(_load("checkpoint", ns.checkpoint), ns.checkpoint))
    emotion = embedding_separability(h_e.data, [s.emotion for s in samples])
    rho = jaccard_similarity_correlation(h_c.data, [s.cognition for s in samples])
    write_report(out / "embeddings_report.json", {"split": ns.split, "n": len(samples), "modalities": ns.modalities,
                                                  "emotion": emotion, "cognition_spearman": rho})
    if ns.format:
        ext = "ecmf" if ns.format == "ecmf" else "csv"
        write_matrix(out / f"h_e.{ext}", h_e.data, ns.format)
        write_matrix(out / f"h_c.{ext}", h_c.data, ns.format)
    rho_text = rho if isinstance(rho, str) else f"{rho:.4f}"
    print(f"emotion margin {emotion['margin']:.4f}  silhouette {emotion['silhouette']:.4f}  cognition rho {rho_text}")
    return EXIT_OK


def _eval_stats(ns) -> int:
    _require(ns, "table")
    if not Path(ns.table).exists():
        raise FormatError(ns.table, "--table file not found")
    props = group_proportions(GroupLabelTable.from_json(ns.table))
    write_report(_out_dir(ns) / "stats_report.json", {"proportions": props})
    for group, row in props.items():
        print(group, " ".join(f"{k}={v:.4f}" for k, v in row.items()))
    return EXIT_OK


def cmd_gradcheck(ns) -> int:
    if not ns.tol > 0 or not ns.h > 0:
        raise ConfigError("tol" if not ns.tol > 0 else "h", "must be positive")
    results = run_suite(ns.tol, ns.h, ns.seed, ns.only)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:22s} max rel error {r.max_rel_error:.3e}")
    failed = [r.name for r in results if not r.passed]
    if ns.out:
        write_report(_out_dir(ns) / "gradcheck_report.json", {
            "tol": ns.tol, "h": ns.h, "results": {r.name: r.max_rel_error for r in results}, "failed": failed})
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-decoder": cmd_pretrain_decoder,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = resolve_run_config(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NumericalError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
