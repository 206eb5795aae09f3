"""
Command-line entry point: ``adan {train,eval,grid,gen-synth,features,ahd}``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.

Training knobs may come from ``--config FILE`` (flat ``key = value`` lines,
``#`` comments, keys named like the long flags) and are overridden by flags.
"""

import argparse
import dataclasses
import os
import sys

from .checkpoint import Checkpoint, save_checkpoint
from .errors import AdanError, ContractError, DimensionError
from .metrics import PROBES, averaged_hausdorff, dump_features, read_pointset, write_pointset
from .model import MODES, ModelConfig, build_model
from .synthdata import SynthConfig, gen_synthetic, write_synthetic
from .text_data import SOURCE, TARGET, dump_embeddings, load_corpus, load_embeddings
from .trainer import TrainConfig, evaluate, grid_search, grid_to_tsv, train

# flag dest -> (owning config, field name, type)
_KNOBS = {
    "lam": ("train", "lam", float),
    "k": ("train", "k", int),
    "lr_fp": ("train", "lr_fp", float),
    "lr_q": ("train", "lr_q", float),
    "clip": ("train", "clip_bound", float),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "seed": ("train", "seed", int),
    "trainable_embeddings": ("train", "trainable_embeddings", bool),
    "clip_exempt_norm": ("train", "clip_exempt_norm", bool),
    "hidden_width": ("model", "hidden_width", int),
    "f_depth": ("model", "f_depth", int),
    "p_depth": ("model", "p_depth", int),
    "q_depth": ("model", "q_depth", int),
    "num_classes": ("model", "num_classes", int),
}
# config-file spellings that differ from the flag dest
_FILE_ALIASES = {"lambda": "lam", "clip_bound": "clip"}


class UsageError(Exception):
    pass


def _parse_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            key = _FILE_ALIASES.get(key, key)
            if key not in _KNOBS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = _KNOBS[key][2]
            try:
                values[key] = _parse_bool(value) if kind is bool else kind(value.strip())
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return values


def _resolve_knobs(args):
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for dest in _KNOBS:
        flag = getattr(args, dest, None)
        if flag is not None:
            values[dest] = flag
    train_kw, model_kw = {}, {}
    for dest, value in values.items():
        owner, name, _ = _KNOBS[dest]
        (train_kw if owner == "train" else model_kw)[name] = value
    return train_kw, model_kw


def parse_list(text, kind, flag):
    tokens = [t.strip() for t in text.split(",")] if text is not None else []
    tokens = [t for t in tokens if t]
    if not tokens:
        raise UsageError(f"{flag} must not be empty")
    out = []
    for tok in tokens:
        try:
            value = kind(tok)
        except ValueError:
            raise UsageError(f"{flag}: cannot parse {tok!r}") from None
        if value <= 0:
            raise UsageError(f"{flag}: {tok!r} must be positive")
        out.append(value)
    return out


# data loading -------------------------------------------------------------


def _load_training_data(args, needs_target):
    if needs_target and not args.tgt_unlabeled:
        raise UsageError(f"--tgt-unlabeled is required in {args.mode} mode")
    wants_tgt = bool(args.tgt_unlabeled or args.tgt_train or args.dev_lang == TARGET)
    if wants_tgt and not args.tgt_emb:
        raise UsageError("--tgt-emb is required when target-language data is given")
    src_table = load_embeddings(args.src_emb, SOURCE)
    tgt_table = load_embeddings(args.tgt_emb, TARGET, like=src_table) if args.tgt_emb else None

    src = load_corpus(args.src_train, src_table, expect_labels=True)
    dev_table = tgt_table if args.dev_lang == TARGET else src_table
    dev = load_corpus(args.dev, dev_table, expect_labels=True)
    tgt = None
    if args.tgt_unlabeled and needs_target:
        tgt = load_corpus(args.tgt_unlabeled, tgt_table, expect_labels=False).unlabeled()
    semi = load_corpus(args.tgt_train, tgt_table, expect_labels=True) if args.tgt_train else None
    num_classes = max(c.num_classes for c in (src, dev, semi) if c is not None)
    for corpus in (src, dev, tgt, semi):
        if corpus is not None:
            corpus.num_classes = num_classes
    return src_table, tgt_table, src, tgt, dev, semi, num_classes


def _configs(args, embed_dim, num_classes):
    train_kw, model_kw = _resolve_knobs(args)
    model_kw.setdefault("num_classes", num_classes)
    mc = ModelConfig(embed_dim=embed_dim, mode=args.mode, **model_kw)
    cfg = TrainConfig(mode=args.mode, **train_kw)
    return mc, cfg


# commands -----------------------------------------------------------------


def cmd_train(args):
    src_table, tgt_table, src, tgt, dev, semi, C = _load_training_data(
        args, needs_target=args.mode in ("adan", "grl")
    )
    mc, cfg = _configs(args, src_table.dim, C)
    cfg = dataclasses.replace(cfg, semi_supervised_target=semi)
    model = build_model(mc, cfg.seed)
    model, history = train(model, src, tgt, dev, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "model.ckpt"), model, cfg, history)
    history.write_tsv(os.path.join(args.out, "history.tsv"))
    if cfg.trainable_embeddings:
        dump_embeddings(src_table, os.path.join(args.out, "src.emb"))
        if tgt_table is not None:
            dump_embeddings(tgt_table, os.path.join(args.out, "tgt.emb"))
    print(f"dev_accuracy={history.best_accuracy!r}")
    return 0


def _load_for_model(args, ckpt, expect_labels):
    table = load_embeddings(args.emb, args.lang)
    if table.dim != ckpt.model_config.embed_dim:
        raise DimensionError(
            f"embedding dimension {table.dim} does not match checkpoint dimension "
            f"{ckpt.model_config.embed_dim}"
        )
    corpus = load_corpus(args.data, table, expect_labels=False)
    if expect_labels and not corpus.labeled:
        raise ContractError(f"{args.data}: evaluation needs a fully labeled corpus")
    corpus.num_classes = ckpt.model_config.num_classes
    return corpus


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    corpus = _load_for_model(args, ckpt, expect_labels=True)
    accuracy = evaluate(ckpt.to_model(), corpus)
    print(f"accuracy={accuracy:.4f}")
    return 0


def cmd_grid(args):
    if args.mode not in ("adan", "grl"):
        raise UsageError("--mode must be adan or grl for a grid search")
    k_list = parse_list(args.k_list, int, "--k-list")
    lam_list = parse_list(args.lambda_list, float, "--lambda-list")
    src_table, _, src, tgt, dev, semi, C = _load_training_data(args, needs_target=True)
    mc, cfg = _configs(args, src_table.dim, C)
    cfg = dataclasses.replace(cfg, semi_supervised_target=semi)
    cells = grid_search(mc, cfg, k_list, lam_list, src, tgt, dev)
    text = grid_to_tsv(cells)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_gen_synth(args):
    cfg = SynthConfig(
        num_classes=args.num_classes,
        vocab_per_class=args.vocab_per_class,
        neutral_vocab=args.neutral_vocab,
        d=args.dim,
        src_train=args.src_train,
        tgt_unlabeled=args.tgt_unlabeled,
        src_dev=args.src_dev,
        tgt_dev=args.tgt_dev,
        tgt_train=args.tgt_train,
        min_length=args.min_length,
        max_length=args.max_length,
        rotation_angle=args.rotation,
        num_planes=args.num_planes,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    paths = write_synthetic(gen_synthetic(cfg), args.out_dir)
    for role in sorted(paths):
        print(f"{role}={paths[role]}")
    return 0


def cmd_features(args):
    ckpt = Checkpoint.load(args.ckpt)
    corpus = _load_for_model(args, ckpt, expect_labels=False)
    write_pointset(dump_features(ckpt.to_model(), corpus, args.probe), args.out)
    return 0


def cmd_ahd(args):
    print(f"ahd={averaged_hausdorff(read_pointset(args.a), read_pointset(args.b)):.4f}")
    return 0


# parser -------------------------------------------------------------------


def _add_knobs(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--lr-fp", type=float)
    p.add_argument("--lr-q", type=float)
    p.add_argument("--clip", type=float, help="critic clip bound")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden-width", type=int)
    p.add_argument("--f-depth", type=int)
    p.add_argument("--p-depth", type=int)
    p.add_argument("--q-depth", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--trainable-embeddings", action="store_true", default=None)
    p.add_argument("--clip-exempt-norm", action="store_true", default=None)


def _add_data(p):
    p.add_argument("--src-train", required=True)
    p.add_argument("--tgt-unlabeled")
    p.add_argument("--tgt-train", help="labeled target documents (semi-supervised)")
    p.add_argument("--dev", required=True)
    p.add_argument("--dev-lang", choices=(SOURCE, TARGET), default=TARGET)
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb")


def build_parser():
    parser = argparse.ArgumentParser(prog="adan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--mode", choices=MODES, required=True)
    _add_data(p)
    p.add_argument("--out", required=True, help="output directory")
    _add_knobs(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
        ("eval", cmd_eval, "accuracy of a checkpoint on a labeled corpus"),
        ("features", cmd_features, "dump probe activations as a TSV point set"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--emb", required=True)
        p.add_argument("--lang", choices=(SOURCE, TARGET), default=TARGET)
        if name == "features":
            p.add_argument("--probe", choices=PROBES, required=True)
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("grid", help="k x lambda grid search")
    p.add_argument("--mode", choices=("adan", "grl"), required=True)
    p.add_argument("--k-list", required=True)
    p.add_argument("--lambda-list", required=True)
    _add_data(p)
    p.add_argument("--out", required=True, help="grid TSV path")
    _add_knobs(p)
    p.set_defaults(func=cmd_grid)

    d = SynthConfig()
    p = sub.add_parser("gen-synth", help="write a synthetic two-language data set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-classes", type=int, default=d.num_classes)
    p.add_argument("--vocab-per-class", type=int, default=d.vocab_per_class)
    p.add_argument("--neutral-vocab", type=int, default=d.neutral_vocab)
    p.add_argument("--dim", type=int, default=d.d)
    p.add_argument("--src-train", type=int, default=d.src_train)
    p.add_argument("--tgt-unlabeled", type=int, default=d.tgt_unlabeled)
    p.add_argument("--src-dev", type=int, default=d.src_dev)
    p.add_argument("--tgt-dev", type=int, default=d.tgt_dev)
    p.add_argument("--tgt-train", type=int, default=d.tgt_train)
    p.add_argument("--min-length", type=int, default=d.min_length)
    p.add_argument("--max-length", type=int, default=d.max_length)
    p.add_argument("--rotation", type=float, default=d.rotation_angle, help="radians")
    p.add_argument("--num-planes", type=int, default=d.num_planes)
    p.add_argument("--noise", type=float, default=d.noise_sigma)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("ahd", help="averaged Hausdorff distance of two point-set files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_ahd)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"adan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (AdanError, OSError) as exc:
        print(f"adan {args.command}: error: {exc}", file=sys.stderr)
        return 1


def run():
    sys.exit(main())
